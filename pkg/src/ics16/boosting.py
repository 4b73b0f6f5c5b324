"""Chunked re-simulation of a long protocol through a scaling scheme.

Each iteration runs one short noiseless protocol under the inner scheme: a
fingerprint binary search for the common rooted path of the two edge sets,
followed by the next ``chunk_size`` rounds of the outer protocol from that
path.  Completed transcripts collect the inner confidence as votes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Protocol, Sequence

from ics16._util import Rational, as_fraction, derive_seed
from ics16.ecc import EccCode
from ics16.errors import BudgetTooSmall, EmptyWeights
from ics16.graph import transcript_index
from ics16.protocol import NoiselessProtocol, PartyOutput, Role, Scheme

# --- edge sets --------------------------------------------------------------------


class EdgeSet:
    """Rooted subtree of the protocol tree.

    An edge is named by the transcript it leads to, so ``"011"`` is the edge
    from ``"01"`` labelled 1.  ``frontier`` is the endpoint of the most
    recently added path and serves as this party's candidate path.
    """

    def __init__(self, paths: Sequence[str] = ()):
        self._edges: set[str] = set()
        self.frontier = ""
        for p in paths:
            self.add_path(p)

    def __contains__(self, edge: str) -> bool:
        return edge in self._edges

    def __len__(self) -> int:
        return len(self._edges)

    def __iter__(self):
        return iter(sorted(self._edges, key=lambda e: (len(e), e)))

    @property
    def edges(self) -> frozenset[str]:
        return frozenset(self._edges)

    def add_path(self, path: str) -> int:
        """Add every edge on the root path to ``path``; returns how many were new."""
        if any(c not in "01" for c in path):
            raise ValueError(f"not a binary path: {path!r}")
        before = len(self._edges)
        self._edges.update(path[:i] for i in range(1, len(path) + 1))
        self.frontier = path
        return len(self._edges) - before

    def is_rooted(self) -> bool:
        return all(len(e) == 1 or e[:-1] in self._edges for e in self._edges)

    def common_path(self, other: "EdgeSet") -> str:
        """Direct intersection, walked from the root; the oracle for ``tree_intersection``."""
        shared = self._edges & other._edges
        p = ""
        while True:
            nxt = [p + b for b in "01" if p + b in shared]
            if not nxt:
                return p
            if len(nxt) > 1:
                raise ValueError("intersection is not a path")
            p = nxt[0]


# --- tree intersection ------------------------------------------------------------


def search_steps(n0: int) -> int:
    """Binary-search steps needed to pin a common prefix length in ``[0, n0]``."""
    return max(1, math.ceil(math.log2(n0 + 1)))


def min_intersection_rounds(n0: int) -> int:
    return 2 * search_steps(n0)


def _fp_bit(seed: int, mid: int, i: int, prefix: str) -> int:
    return derive_seed(seed, "fp", mid, i, transcript_index(prefix)) & 1


def _short_bit(seed: int, mid: int, i: int) -> int:
    return derive_seed(seed, "short", mid, i) & 1


def _search_bit(role: Role, cand: str, seed: int, mid: int, i: int, bob_bit: int | None) -> int:
    if role == Role.BOB:
        return _fp_bit(seed, mid, i, cand[:mid]) if mid <= len(cand) else _short_bit(seed, mid, i)
    if mid > len(cand):
        return 1 - bob_bit  # force a mismatch
    return _fp_bit(seed, mid, i, cand[:mid])


def _replay_search(bits: str, n0: int, fp_bits: int) -> tuple[int, int, int]:
    """``(lo, hi, steps_done)`` after the complete steps contained in ``bits``.

    Each step is ``fp_bits`` slot pairs, Bob's bit first.  The prefixes of
    length ``mid`` match iff every pair agrees.
    """
    lo, hi = 0, n0
    width = 2 * fp_bits
    done = len(bits) // width
    for s in range(done):
        if lo == hi:
            continue
        mid = (lo + hi + 1) // 2
        seg = bits[s * width : (s + 1) * width]
        if all(seg[2 * i] == seg[2 * i + 1] for i in range(fp_bits)):
            lo = mid
        else:
            hi = mid - 1
    return lo, hi, done


@dataclass(frozen=True)
class IntersectionResult:
    path: str
    transcript: str
    rounds: int
    fp_bits: int


def tree_intersection(ea: EdgeSet, eb: EdgeSet, rounds_budget: int, seed: int, n0: int | None = None) -> IntersectionResult:
    """Noiseless fingerprint search for the common prefix of the two candidate paths.

    The result is a common rooted path of both sets unless fingerprints
    collide (probability at most ``steps * 2**-fp_bits``).  It equals the
    whole intersection whenever both frontiers run through its endpoint.
    """
    if n0 is None:
        n0 = max(len(ea.frontier), len(eb.frontier))
    steps = search_steps(n0)
    fp_bits = rounds_budget // (2 * steps)
    if fp_bits < 1:
        raise BudgetTooSmall(f"{rounds_budget} rounds < {2 * steps} needed for depth {n0}")
    bits = ""
    for _ in range(steps):
        lo, hi, _done = _replay_search(bits, n0, fp_bits)
        mid = (lo + hi + 1) // 2
        for i in range(fp_bits):
            if lo == hi:
                bits += "00"
                continue
            b = _search_bit(Role.BOB, eb.frontier, seed, mid, i, None)
            a = _search_bit(Role.ALICE, ea.frontier, seed, mid, i, b)
            bits += f"{b}{a}"
    lo, _, _ = _replay_search(bits, n0, fp_bits)
    return IntersectionResult(ea.frontier[:lo], bits, len(bits), fp_bits)


# --- the per-iteration protocol ---------------------------------------------------


@dataclass(frozen=True)
class BoostInput:
    x: int
    candidate: str


@dataclass(frozen=True)
class InnerIterationProtocol(NoiselessProtocol):
    """Header bit, intersection search, then ``chunk`` outer rounds in slot pairs.

    Layout (0-indexed): position 0 is Alice's fixed 1; positions
    ``1 .. 2*steps*fp_bits`` carry the search; each outer round then takes a
    (Bob, Alice) slot pair in which only the outer speaker's slot is live and
    the other sends 0.  Rounds past the end of the outer protocol, search
    steps after the range has closed and the final slot are all 0.
    """

    outer: NoiselessProtocol
    chunk: int
    fp_bits: int
    seed: int

    @property
    def steps(self) -> int:
        return search_steps(self.outer.n0)

    @property
    def search_len(self) -> int:
        return 2 * self.steps * self.fp_bits

    @property
    def n0(self) -> int:  # type: ignore[override]
        return 2 + self.search_len + 2 * self.chunk

    def next_bit(self, role: Role, inp: BoostInput, prefix: str) -> int:
        return _inner_bit(self, role, inp, prefix)

    def parse(self, role: Role, inp: BoostInput, t: str) -> tuple[str | None, str]:
        """Common path ``p`` and the outer bits that follow it, read from an inner transcript.

        Only complete search steps and complete slot pairs are read.  If the
        search is incomplete the path is unknown and ``(None, "")`` is returned.
        """
        search = t[1 : 1 + self.search_len]
        lo, hi, done = _replay_search(search, self.outer.n0, self.fp_bits)
        p = inp.candidate[:lo]
        if done < self.steps:
            return None, ""
        ext = ""
        body = t[1 + self.search_len :]
        for j in range(min(self.chunk, len(body) // 2)):
            pos = len(p) + j
            if pos >= self.outer.n0:
                break
            owner = self.outer.speaker(pos)
            ext += body[2 * j + (1 if owner == Role.ALICE else 0)]
        return p, ext

    def descriptor(self) -> dict:
        return {
            "kind": "boost-iteration",
            "outer": self.outer.descriptor(),
            "chunk": self.chunk,
            "fp_bits": self.fp_bits,
            "seed": self.seed,
            "n0": self.n0,
        }


@lru_cache(maxsize=1 << 16)
def _inner_bit(proto: InnerIterationProtocol, role: Role, inp: BoostInput, prefix: str) -> int:
    j = len(prefix)
    if j == 0:
        return 1
    if j <= proto.search_len:
        k = j - 1
        width = 2 * proto.fp_bits
        lo, hi, _ = _replay_search(prefix[1 : 1 + (k // width) * width], proto.outer.n0, proto.fp_bits)
        if lo == hi:
            return 0
        mid = (lo + hi + 1) // 2
        i = (k % width) // 2
        bob_bit = int(prefix[-1]) if role == Role.ALICE else None
        return _search_bit(role, inp.candidate, proto.seed, mid, i, bob_bit)
    k = j - 1 - proto.search_len
    pair, side = divmod(k, 2)
    if pair >= proto.chunk:
        return 0
    lo, _, _ = _replay_search(prefix[1 : 1 + proto.search_len], proto.outer.n0, proto.fp_bits)
    p = inp.candidate[:lo]
    pos = len(p) + pair
    if pos >= proto.outer.n0:
        return 0
    owner = proto.outer.speaker(pos)
    if owner != role or side != (1 if role == Role.ALICE else 0):
        return 0
    body = prefix[1 + proto.search_len :]
    done = "".join(
        body[2 * q + (1 if proto.outer.speaker(len(p) + q) == Role.ALICE else 0)] for q in range(pair)
    )
    return proto.outer.next_bit(role, inp.x, p + done)


# --- inner schemes ----------------------------------------------------------------


@dataclass(frozen=True)
class InnerResult:
    alice: PartyOutput
    bob: PartyOutput
    flips: int = 0
    bits: int = 0

    @property
    def corruption(self) -> Fraction:
        return Fraction(self.flips, self.bits) if self.bits else Fraction(0)


class InnerScheme(Protocol):
    def run(self, proto: NoiselessProtocol, inp_a, inp_b, seed: int) -> InnerResult: ...


@dataclass
class MockInnerScheme:
    """Returns the noiseless transcript, or scripted (transcript, confidence) outcomes.

    ``script[i]`` is consulted on the ``i``-th call; each entry maps
    ``"alice"``/``"bob"`` to ``(transcript or None, confidence)``, where
    ``None`` means the true inner transcript.  Unscripted calls return the
    true transcript with ``default_confidence``.
    """

    script: Sequence[dict] = ()
    default_confidence: Rational = 1
    calls: int = 0

    def run(self, proto: NoiselessProtocol, inp_a, inp_b, seed: int) -> InnerResult:
        truth = proto.transcript(inp_a, inp_b)
        entry = self.script[self.calls] if self.calls < len(self.script) else {}
        self.calls += 1
        outs = {}
        for who in ("alice", "bob"):
            t, c = entry.get(who, (None, self.default_confidence))
            outs[who] = PartyOutput(truth if t is None else t, as_fraction(c))
        return InnerResult(outs["alice"], outs["bob"])


@dataclass
class RealInnerScheme:
    """Runs the single-level scheme on each iteration's protocol, one adversary slice per call.

    With ``code_seed`` set every iteration shares one layered code, which
    lets the label tables be reused; otherwise each iteration draws its own.
    """

    ecc: EccCode
    epsilon: Rational = Fraction(1, 4)
    K: int | None = None
    alpha: Rational = 0
    adversary: dict | None = None
    code_seed: int | None = None

    def run(self, proto: NoiselessProtocol, inp_a, inp_b, seed: int) -> InnerResult:
        from ics16.channel import adversary_from_descriptor, budget_for, simulate

        code_seed = derive_seed(seed, "code") if self.code_seed is None else self.code_seed
        scheme = Scheme.build(proto, code_seed, self.ecc, self.epsilon, self.K)
        adv = adversary_from_descriptor(self.adversary, derive_seed(seed, "adversary"))
        budget = budget_for(self.alpha, scheme.K, scheme.M)
        res = simulate(scheme, inp_a, inp_b, adv, budget, derive_seed(seed, "alice"), derive_seed(seed, "bob"))
        flips = sum(m["flips"] for m in res.messages)
        return InnerResult(res.outputs["alice"], res.outputs["bob"], flips, scheme.K * scheme.M)


# --- the driver -------------------------------------------------------------------


def default_chunk(n0: int) -> int:
    return min(n0, max(4, math.ceil(math.log2(max(n0, 2)) ** 4)))


def default_beta(n0: int, epsilon: Rational, chunk: int) -> int:
    return max(1, math.ceil(Fraction(n0) / (as_fraction(epsilon) * chunk)))


@dataclass(frozen=True)
class BoostParams:
    chunk_size: int
    beta: int
    intersection_rounds: int

    def __post_init__(self) -> None:
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @classmethod
    def for_protocol(
        cls,
        n0: int,
        epsilon: Rational = Fraction(1, 4),
        chunk_size: int | None = None,
        beta: int | None = None,
        intersection_rounds: int | None = None,
    ) -> "BoostParams":
        chunk = default_chunk(n0) if chunk_size is None else chunk_size
        return cls(
            chunk,
            default_beta(n0, epsilon, chunk) if beta is None else beta,
            min_intersection_rounds(n0) if intersection_rounds is None else intersection_rounds,
        )


@dataclass
class BoostParty:
    role: Role
    x: int
    edges: EdgeSet = field(default_factory=EdgeSet)
    leaves: dict[str, Fraction] = field(default_factory=dict)


def _consistent_prefix(outer: NoiselessProtocol, role: Role, x: int, path: str) -> str:
    """Longest prefix of ``path`` whose bits at ``role``'s positions follow its own input."""
    for j in range(int(role), len(path), 2):
        if int(path[j]) != outer.next_bit(role, x, path[:j]):
            return path[:j]
    return path


def _absorb(party: BoostParty, proto: InnerIterationProtocol, out: PartyOutput) -> dict:
    inp = BoostInput(party.x, party.edges.frontier)
    p, ext = proto.parse(party.role, inp, out.transcript)
    if p is None:
        return {"path": None, "added": 0, "vote": None, "confidence": str(out.confidence)}
    full = _consistent_prefix(proto.outer, party.role, party.x, p + ext)
    added = party.edges.add_path(full) if len(full) > len(p) else 0
    if len(full) == len(p):
        party.edges.frontier = p
    vote = None
    if len(p) == proto.outer.n0:
        party.leaves[p] = party.leaves.get(p, Fraction(0)) + out.confidence
        vote = p
    return {"path": p, "added": added, "vote": vote, "confidence": str(out.confidence)}


def boost_iteration(
    alice: BoostParty,
    bob: BoostParty,
    outer: NoiselessProtocol,
    inner: InnerScheme,
    params: BoostParams,
    seed: int,
) -> dict:
    """One iteration: build the iteration protocol, simulate it, absorb each party's output."""
    steps = search_steps(outer.n0)
    fp_bits = params.intersection_rounds // (2 * steps)
    if fp_bits < 1:
        raise BudgetTooSmall(f"{params.intersection_rounds} rounds < {2 * steps} needed for depth {outer.n0}")
    proto = InnerIterationProtocol(outer, params.chunk_size, fp_bits, derive_seed(seed, "fingerprint"))
    inp_a = BoostInput(alice.x, alice.edges.frontier)
    inp_b = BoostInput(bob.x, bob.edges.frontier)
    true_path = tree_intersection(alice.edges, bob.edges, params.intersection_rounds, proto.seed, outer.n0).path
    res = inner.run(proto, inp_a, inp_b, seed)
    info_a = _absorb(alice, proto, res.alice)
    info_b = _absorb(bob, proto, res.bob)
    return {
        "corruption": str(res.corruption),
        "flips": res.flips,
        "intersection_length": len(true_path),
        "alice": info_a,
        "bob": info_b,
    }


def leaf_argmax(weights: dict[str, Rational]) -> tuple[str, Fraction]:
    """Heaviest leaf with positive weight; ties go to the lexicographically smallest."""
    live = {t: as_fraction(w) for t, w in weights.items() if as_fraction(w) > 0}
    if not live:
        raise EmptyWeights("no leaf carries weight")
    best = min(live, key=lambda t: (-live[t], t))
    return best, live[best]


def boost_finalize(weights: dict[str, Rational], beta: int) -> PartyOutput:
    """``(argmax, max(0, (w - w^c) / beta))``; no weight gives the empty transcript at confidence 0."""
    try:
        best, w = leaf_argmax(weights)
    except EmptyWeights:
        return PartyOutput("", Fraction(0))
    if beta < 1:
        raise ValueError("beta must be >= 1 when weights are present")
    rest = sum((as_fraction(v) for t, v in weights.items() if t != best), Fraction(0))
    return PartyOutput(best, max(Fraction(0), (w - rest) / beta))


@dataclass
class BoostResult:
    truth: str
    params: BoostParams
    iterations: list[dict]
    outputs: dict[str, PartyOutput]
    leaves: dict[str, dict[str, str]]

    def success(self) -> bool:
        return all(o.transcript == self.truth for o in self.outputs.values())

    def to_dict(self) -> dict:
        return {
            "truth": self.truth,
            "params": {
                "chunk_size": self.params.chunk_size,
                "beta": self.params.beta,
                "intersection_rounds": self.params.intersection_rounds,
            },
            "iterations": self.iterations,
            "outputs": {k: v.to_dict() for k, v in self.outputs.items()},
            "leaves": self.leaves,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def boost(
    outer: NoiselessProtocol, x: int, y: int, inner: InnerScheme, params: BoostParams, seed: int
) -> BoostResult:
    """Run the boosted scheme for ``beta`` iterations and vote."""
    alice, bob = BoostParty(Role.ALICE, x), BoostParty(Role.BOB, y)
    iters = []
    for i in range(params.beta):
        info = boost_iteration(alice, bob, outer, inner, params, derive_seed(seed, "iteration", i))
        info["i"] = i + 1
        iters.append(info)
    outputs = {
        "alice": boost_finalize(alice.leaves, params.beta),
        "bob": boost_finalize(bob.leaves, params.beta),
    }
    leaves = {p.role.tag: {t: str(w) for t, w in sorted(p.leaves.items())} for p in (alice, bob)}
    return BoostResult(outer.transcript(x, y), params, iters, outputs, leaves)


@dataclass
class BoostedInnerScheme:
    """A boosted scheme exposed through the inner-scheme interface, for stacking levels."""

    inner: InnerScheme
    epsilon: Rational = Fraction(1, 4)
    chunk_size: int | None = None
    beta: int | None = None

    def run(self, proto: NoiselessProtocol, inp_a, inp_b, seed: int) -> InnerResult:
        params = BoostParams.for_protocol(proto.n0, self.epsilon, self.chunk_size, self.beta)
        res = boost(proto, inp_a, inp_b, self.inner, params, seed)
        flips = sum(it["flips"] for it in res.iterations)
        return InnerResult(res.outputs["alice"], res.outputs["bob"], flips, 0)
