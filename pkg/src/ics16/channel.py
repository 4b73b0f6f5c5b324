"""Adversarial bit-flip channel and the session runner.

Adversaries see both parties' states and the payload about to be delivered,
but commit their flips before the receiver draws its coin for that message.
Parties' states are passed by reference; strategies must only read them.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from ics16._util import Rational, as_fraction, derive_seed
from ics16.analysis import (
    UpdateClass,
    classify_update,
    compute_S,
    lemma_n_holds,
    lemma_n_violations,
)
from ics16.ecc import EccCode, Instr, cached_ecc, instruction_mask
from ics16.errors import BudgetViolation
from ics16.graph import GraphParams
from ics16.layered_code import LayeredCode
from ics16.protocol import (
    ExchangeProtocol,
    NoiselessProtocol,
    PartyOutput,
    PartyState,
    RandomTreeProtocol,
    Role,
    Scheme,
    first_message,
    new_party,
    output,
    receive_and_respond,
)

# --- adversaries -----------------------------------------------------------------


@dataclass(frozen=True)
class ChannelView:
    k: int
    sender: Role
    payload: int
    sent_kind: str
    alice: PartyState
    bob: PartyState
    scheme: Scheme
    remaining: int

    @property
    def M(self) -> int:
        return self.scheme.M


class Adversary(ABC):
    kind: str = "abstract"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)

    def reset(self, seed: int | None = None) -> None:
        if seed is not None:
            self.seed = seed
        self.rng = random.Random(self.seed)

    @abstractmethod
    def corrupt(self, view: ChannelView) -> int:
        """Flip mask for message ``view.k``; at most ``view.remaining`` bits."""

    def params(self) -> dict:
        return {}

    def descriptor(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, **self.params()}

    def _pick(self, positions: list[int], count: int) -> int:
        mask = 0
        for i in self.rng.sample(positions, count) if count < len(positions) else positions:
            mask |= 1 << i
        return mask


def _positions(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


class NoAdversary(Adversary):
    kind = "none"

    def corrupt(self, view: ChannelView) -> int:
        return 0


class RandomFlips(Adversary):
    """Each bit flips independently with probability ``rate``; flips past the budget are dropped."""

    kind = "random"

    def __init__(self, rate: Rational, seed: int = 0):
        super().__init__(seed)
        self.rate = as_fraction(rate)

    def params(self) -> dict:
        return {"rate": str(self.rate)}

    def corrupt(self, view: ChannelView) -> int:
        num, den = self.rate.numerator, self.rate.denominator
        flips = [i for i in range(view.M) if self.rng.randrange(den) < num]
        return self._pick(flips, min(len(flips), view.remaining)) if flips else 0


class Burst(Adversary):
    """Flip every bit of messages ``start .. start + length - 1`` while budget lasts."""

    kind = "burst"

    def __init__(self, start: int = 1, length: int = 1, seed: int = 0):
        super().__init__(seed)
        self.start, self.length = start, length

    def params(self) -> dict:
        return {"start": self.start, "length": self.length}

    def corrupt(self, view: ChannelView) -> int:
        if not self.start <= view.k < self.start + self.length:
            return 0
        n = min(view.M, view.remaining)
        return (1 << n) - 1


@lru_cache(maxsize=16)
def _nearest_shift(ecc: EccCode) -> int:
    """The lightest nonzero codeword difference ``E(u) ^ R(d0) ^ R(d1)``."""
    table = ecc.base_table
    best, best_w = None, None
    masks = ecc.mask_words
    weights = [np.bitwise_count(table ^ masks[d]).sum(axis=1, dtype=np.int64) for d in Instr]
    for d in Instr:
        w = weights[d].copy()
        if d == Instr.ASK:
            w[0] = 1 << 60  # zero difference
        u = int(np.argmin(w))
        if best_w is None or w[u] < best_w:
            best, best_w = ecc.base(u) ^ instruction_mask(d, ecc.M), int(w[u])
    return best


class NearestOtherCodeword(Adversary):
    """Push each message toward its closest other codeword, spending up to the budget.

    By linearity the closest other codeword sits at the same offset from every
    codeword, so the offset is computed once per code.  ``per_message`` caps
    the flips on a single message as a fraction of ``M``.
    """

    kind = "nearest"

    def __init__(self, per_message: Rational | None = None, seed: int = 0):
        super().__init__(seed)
        self.per_message = None if per_message is None else as_fraction(per_message)

    def params(self) -> dict:
        return {"per_message": None if self.per_message is None else str(self.per_message)}

    def corrupt(self, view: ChannelView) -> int:
        shift = _nearest_shift(view.scheme.ecc)
        cap = view.remaining
        if self.per_message is not None:
            cap = min(cap, math.floor(self.per_message * view.M))
        pos = _positions(shift)
        return self._pick(pos, min(cap, len(pos))) if cap > 0 else 0


class QuestionJammer(Adversary):
    """Turn questions into answers for the same pair, and answers into questions."""

    kind = "jammer"

    def __init__(self, per_message: Rational | None = None, answer: str = "<", seed: int = 0):
        super().__init__(seed)
        self.per_message = None if per_message is None else as_fraction(per_message)
        self.answer = Instr("01<".index(answer))

    def params(self) -> dict:
        return {
            "per_message": None if self.per_message is None else str(self.per_message),
            "answer": self.answer.glyph,
        }

    def corrupt(self, view: ChannelView) -> int:
        M = view.M
        if view.sent_kind == "question":
            shift = instruction_mask(self.answer, M)
        else:
            # the sent answer is E(z) ^ R(d); find d by stripping each mask
            shift = None
            for d in (Instr.ZERO, Instr.ONE, Instr.BACK):
                cand = view.payload ^ instruction_mask(d, M)
                if _is_question(view.scheme.ecc, cand):
                    shift = instruction_mask(d, M)
                    break
            if shift is None:
                return 0
        cap = view.remaining
        if self.per_message is not None:
            cap = min(cap, math.floor(self.per_message * M))
        pos = _positions(shift)
        return self._pick(pos, min(cap, len(pos))) if cap > 0 else 0


@lru_cache(maxsize=16)
def _row_basis(ecc: EccCode) -> dict[int, int]:
    basis: dict[int, int] = {}  # leading bit -> basis vector
    for row in ecc.rows:
        while row:
            top = row.bit_length() - 1
            if top not in basis:
                basis[top] = row
                break
            row ^= basis[top]
    return basis


def _is_question(ecc: EccCode, word: int) -> bool:
    """Whether ``word`` equals ``E(z)`` for some pair, i.e. lies in the row span."""
    basis = _row_basis(ecc)
    while word:
        top = word.bit_length() - 1
        if top not in basis:
            return False
        word ^= basis[top]
    return True


class Scripted(Adversary):
    """Replay fixed per-message flip masks; optionally report another strategy's descriptor."""

    kind = "scripted"

    def __init__(self, masks: dict[int, int], descriptor: dict | None = None, seed: int = 0):
        super().__init__(seed)
        self.masks = {int(k): int(v) for k, v in masks.items()}
        self._descriptor = descriptor

    def descriptor(self) -> dict:
        if self._descriptor is not None:
            return dict(self._descriptor)
        return {"kind": self.kind, "seed": self.seed, "masks": {str(k): format(v, "x") for k, v in self.masks.items()}}

    def corrupt(self, view: ChannelView) -> int:
        return self.masks.get(view.k, 0)


def adversary_from_descriptor(d: dict | None, seed: int | None = None) -> Adversary:
    d = dict(d or {"kind": "none"})
    kind = d.pop("kind")
    s = int(d.pop("seed", 0)) if seed is None else seed
    if kind == "none":
        return NoAdversary(s)
    if kind == "random":
        return RandomFlips(d["rate"], seed=s)
    if kind == "burst":
        return Burst(int(d.get("start", 1)), int(d.get("length", 1)), seed=s)
    if kind == "nearest":
        return NearestOtherCodeword(d.get("per_message"), seed=s)
    if kind == "jammer":
        return QuestionJammer(d.get("per_message"), d.get("answer", "<"), seed=s)
    if kind == "scripted":
        return Scripted({int(k): int(v, 16) for k, v in d.get("masks", {}).items()}, seed=s)
    raise ValueError(f"unknown adversary kind {kind!r}")


# --- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    n0: int = 4
    epsilon: str = "1/4"
    K: int | None = None
    alphabet_size: int = 256
    ecc_epsilon: str = "1/20"
    ecc_seed: int = 0
    ecc_M: int | None = None
    protocol: str = "random"
    protocol_seed: int = 0
    code_seed: int = 0
    x: int = 0
    y: int = 0
    alice_seed: int = 1
    bob_seed: int = 2
    adversary_seed: int = 3
    alpha: str = "0"

    _PER_RUN = ("protocol_seed", "code_seed", "x", "y", "alice_seed", "bob_seed", "adversary_seed")

    def __post_init__(self) -> None:
        object.__setattr__(self, "epsilon", str(as_fraction(self.epsilon)))
        object.__setattr__(self, "ecc_epsilon", str(as_fraction(self.ecc_epsilon)))
        object.__setattr__(self, "alpha", str(as_fraction(self.alpha)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        return cls(**{k: v for k, v in d.items() if k in known})

    def config_hash(self) -> str:
        return _hash(self.to_dict())

    def family_hash(self, adversary: dict | None = None) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self._PER_RUN}
        adv = {k: v for k, v in (adversary or {"kind": "none"}).items() if k != "seed"}
        return _hash({"config": d, "adversary": adv})

    def ecc(self) -> EccCode:
        return cached_ecc(self.alphabet_size, self.ecc_epsilon, self.ecc_seed, self.ecc_M)

    def noiseless(self) -> NoiselessProtocol:
        if self.protocol == "random":
            return RandomTreeProtocol(self.n0, self.protocol_seed)
        if self.protocol == "exchange":
            return ExchangeProtocol(self.n0)
        raise ValueError(f"unknown protocol {self.protocol!r}")

    def scheme(self) -> Scheme:
        return Scheme.build(self.noiseless(), self.code_seed, self.ecc(), self.epsilon, self.K)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def budget_for(alpha: Rational, K: int, M: int) -> int:
    return math.floor(as_fraction(alpha) * K * M)


# --- run records -----------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    family_hash: str
    adversary: dict
    n0: int
    K: int
    M: int
    budget: int
    code_epsilon: str
    truth: str
    messages: list[dict] = field(default_factory=list)
    outputs: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)
    S: list[int] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    lemma_n: list[dict] = field(default_factory=list)

    @property
    def total_flips(self) -> int:
        return sum(m["flips"] for m in self.messages)

    @property
    def delta(self) -> Fraction:
        """Realized corruption fraction over the whole session."""
        return Fraction(self.total_flips, self.K * self.M)

    @property
    def alphas(self) -> list[Fraction]:
        return [Fraction(m["flips"], self.M) for m in self.messages]

    def success(self) -> bool:
        return self.outputs["alice"]["transcript"] == self.truth == self.outputs["bob"]["transcript"]

    def layered_code(self) -> LayeredCode:
        cfg = SessionConfig.from_dict(self.config)
        return LayeredCode(cfg.code_seed, cfg.alphabet_size, GraphParams(self.n0, 2 * self.K + 2))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls.from_dict(json.loads(line))


_observers: list[Callable[[RunRecord], None]] = []

# running totals over every simulated session in this process (and parallel workers' results)
LEMMA_N_TALLY = {"sessions": 0, "violations": 0}


def _tally(violations: int) -> None:
    LEMMA_N_TALLY["sessions"] += 1
    LEMMA_N_TALLY["violations"] += violations


def add_observer(fn: Callable[[RunRecord], None]) -> None:
    """Register a callback that sees every completed record (used by the test suite)."""
    _observers.append(fn)


def remove_observer(fn: Callable[[RunRecord], None]) -> None:
    if fn in _observers:
        _observers.remove(fn)


@dataclass
class SessionResult:
    alice: PartyState
    bob: PartyState
    outputs: dict[str, PartyOutput]
    messages: list[dict]
    truth: str
    lemma_n: list[dict]


def simulate(
    scheme: Scheme,
    x: int,
    y: int,
    adversary: Adversary | None,
    budget: int,
    alice_seed: int,
    bob_seed: int,
) -> SessionResult:
    """Run the K-message exchange over an adversarial channel."""
    adversary = adversary or NoAdversary()
    proto = scheme.proto
    M = scheme.M
    truth = proto.transcript(x, y)
    parties = {Role.ALICE: new_party(scheme, Role.ALICE, x), Role.BOB: new_party(scheme, Role.BOB, y)}
    rngs = {Role.ALICE: random.Random(alice_seed), Role.BOB: random.Random(bob_seed)}
    psi = {Role.ALICE: 0, Role.BOB: 0}
    _, payload = first_message(parties[Role.ALICE])
    kind = "question"
    remaining = budget
    messages, violations = [], []
    for k in range(1, scheme.K + 1):
        sender = Role.ALICE if k % 2 else Role.BOB
        receiver = sender.other
        view = ChannelView(k, sender, payload, kind, parties[Role.ALICE], parties[Role.BOB], scheme, remaining)
        mask = adversary.corrupt(view)
        flips = mask.bit_count()
        if mask < 0 or mask.bit_length() > M or flips > remaining:
            raise BudgetViolation(f"message {k}: {flips} flips with {remaining} remaining")
        remaining -= flips
        delivered = payload ^ mask
        state = parties[receiver]
        _, reply, info = receive_and_respond(state, delivered, rngs[receiver])
        cls = classify_update(info.before, info.after, truth, receiver, state.inp, proto)
        psi[receiver] += (cls == UpdateClass.GOOD) - (cls == UpdateClass.BAD)
        for role, party in parties.items():
            if not lemma_n_holds(psi[role], party.transcript, party.w, truth, proto.n0):
                violations.append({"k": k, "party": role.tag, "psi": psi[role],
                                   "transcript": party.transcript, "w": party.w})
        width = (M + 3) // 4
        messages.append({
            "k": k,
            "sender": sender.tag,
            "receiver": receiver.tag,
            "kind": kind,
            "sent": format(payload, f"0{width}x"),
            "delivered": format(delivered, f"0{width}x"),
            "flips": flips,
            "case": info.case,
            "instruction": info.instruction,
            "coin": info.coin,
            "threshold": info.threshold,
            "before": list(info.before),
            "after": list(info.after),
            "class": cls.value,
        })
        payload, kind = reply, info.sent_kind
    outputs = {role.tag: output(p, scheme.K) for role, p in parties.items()}
    _tally(len(violations))
    return SessionResult(parties[Role.ALICE], parties[Role.BOB], outputs, messages, truth, violations)


def run_session(config: SessionConfig, adversary: Adversary | None = None) -> RunRecord:
    """Run one fully seeded session and capture its record."""
    adversary = adversary or NoAdversary(config.adversary_seed)
    scheme = config.scheme()
    budget = budget_for(config.alpha, scheme.K, scheme.M)
    res = simulate(scheme, config.x, config.y, adversary, budget, config.alice_seed, config.bob_seed)
    adv = adversary.descriptor()
    final = {"alice": res.alice.snapshot(), "bob": res.bob.snapshot()}
    rec = RunRecord(
        config=config.to_dict(),
        config_hash=config.config_hash(),
        family_hash=config.family_hash(adv),
        adversary=adv,
        n0=scheme.n0,
        K=scheme.K,
        M=scheme.M,
        budget=budget,
        code_epsilon=str(scheme.code_epsilon),
        truth=res.truth,
        messages=res.messages,
        outputs={k: v.to_dict() for k, v in res.outputs.items()},
        final=final,
        lemma_n=res.lemma_n,
    )
    rec.psi = {
        role: _psi_of(rec.messages, role) for role in ("alice", "bob")
    }
    rec.S = sorted(
        compute_S(final["alice"]["U"], final["bob"]["U"], final["alice"]["P"], final["bob"]["P"],
                  scheme.code, scheme.code_epsilon, scheme.K)
    )
    assert rec.lemma_n == lemma_n_violations(rec)
    for fn in list(_observers):
        fn(rec)
    return rec


def _psi_of(messages: list[dict], who: str) -> list[int]:
    out, psi = [], 0
    for m in messages:
        if m["receiver"] == who:
            psi += (m["class"] == "good") - (m["class"] == "bad")
        out.append(psi)
    return out


def replay(record: RunRecord) -> RunRecord:
    """Re-run a recorded session with its realized flip masks."""
    masks = {m["k"]: int(m["sent"], 16) ^ int(m["delivered"], 16) for m in record.messages}
    adv = Scripted(masks, descriptor=record.adversary)
    return run_session(SessionConfig.from_dict(record.config), adv)


# --- Monte Carlo -----------------------------------------------------------------


def derive_run_config(template: SessionConfig, master_seed: int, i: int) -> SessionConfig:
    """Per-run inputs, code, coins and adversary seed from the master seed."""
    def s(label: str) -> int:
        return derive_seed(master_seed, i, label)

    if template.protocol == "exchange":
        x = s("x") % (1 << (template.n0 // 2 - 1))
        y = s("y") % (1 << (template.n0 // 2))
    else:
        x, y = s("x") & 0xFFFF, s("y") & 0xFFFF
    return replace(
        template,
        protocol_seed=s("protocol") & 0xFFFFFFFF,
        code_seed=s("code"),
        x=x,
        y=y,
        alice_seed=s("alice"),
        bob_seed=s("bob"),
        adversary_seed=s("adversary"),
    )


def _one_run(args: tuple[dict, dict | None, int, int]) -> RunRecord:
    template, adv, seed, i = args
    cfg = derive_run_config(SessionConfig.from_dict(template), seed, i)
    return run_session(cfg, adversary_from_descriptor(adv, cfg.adversary_seed))


@dataclass
class MonteCarloStats:
    alpha: Fraction
    n_runs: int
    successes: int
    correct_outputs: int
    wrong_outputs: int
    conf_correct_sum: Fraction
    conf_wrong_sum: Fraction
    conf_wrong_max: Fraction | None
    conf_correct_max: Fraction | None
    conf_histogram: dict[str, int]
    psi_final_sum: int
    S_size_sum: int
    lemma_n_violations: int
    records: list[RunRecord] = field(default_factory=list, repr=False)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_runs

    @property
    def mean_confidence_correct(self) -> float | None:
        return float(self.conf_correct_sum / self.correct_outputs) if self.correct_outputs else None

    @property
    def mean_confidence_wrong(self) -> float | None:
        return float(self.conf_wrong_sum / self.wrong_outputs) if self.wrong_outputs else None

    @property
    def psi_final_mean(self) -> float:
        return self.psi_final_sum / (2 * self.n_runs)

    @property
    def S_size_mean(self) -> float:
        return self.S_size_sum / self.n_runs

    def row(self) -> dict:
        def f(v):
            return "" if v is None else f"{float(v):.6f}"

        return {
            "alpha": str(self.alpha),
            "n_runs": self.n_runs,
            "success_rate": f(self.success_rate),
            "mean_confidence_correct": f(self.mean_confidence_correct),
            "mean_confidence_wrong": f(self.mean_confidence_wrong),
            "conf_wrong_max": f(self.conf_wrong_max),
            "S_size_mean": f(self.S_size_mean),
            "psi_final_mean": f(self.psi_final_mean),
        }


def aggregate(records: Iterable[RunRecord], alpha: Rational = 0, keep: bool = False) -> MonteCarloStats:
    st = MonteCarloStats(as_fraction(alpha), 0, 0, 0, 0, Fraction(0), Fraction(0), None, None, {}, 0, 0, 0)
    for r in records:
        st.n_runs += 1
        st.successes += r.success()
        for who in ("alice", "bob"):
            out = r.outputs[who]
            c = Fraction(out["confidence"])
            st.conf_histogram[str(c)] = st.conf_histogram.get(str(c), 0) + 1
            if out["transcript"] == r.truth:
                st.correct_outputs += 1
                st.conf_correct_sum += c
                st.conf_correct_max = c if st.conf_correct_max is None else max(st.conf_correct_max, c)
            else:
                st.wrong_outputs += 1
                st.conf_wrong_sum += c
                st.conf_wrong_max = c if st.conf_wrong_max is None else max(st.conf_wrong_max, c)
            st.psi_final_sum += r.psi[who][-1] if r.psi[who] else 0
        st.S_size_sum += len(r.S)
        st.lemma_n_violations += len(r.lemma_n)
        if keep:
            st.records.append(r)
    return st


def monte_carlo(
    config: SessionConfig,
    adversary: dict | None,
    n_runs: int,
    seed: int,
    jobs: int = 1,
    keep_records: bool = False,
) -> MonteCarloStats:
    """Independent seeded sessions; ``adversary`` is a descriptor re-seeded per run."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    args = [(config.to_dict(), adversary, seed, i) for i in range(n_runs)]
    if jobs > 1:
        config.ecc()  # build once before forking
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_one_run, args, chunksize=max(1, n_runs // (4 * jobs))))
        for rec in records:
            _tally(len(rec.lemma_n))
            for fn in list(_observers):
                fn(rec)
    else:
        records = [_one_run(a) for a in args]
    return aggregate(records, config.alpha, keep_records)
