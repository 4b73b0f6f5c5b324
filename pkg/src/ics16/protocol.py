"""Two-party state machines for the 1/6-resilient scheme.

Each party keeps an update sequence ``U`` of edge pairs on the transcript
graph, a weight ``w`` and the list ``P`` of symbol pairs sent and received.
Messages are ECC codewords of a symbol pair plus an instruction; the receiver
picks one of three cases from the distances of the received word.
"""

from __future__ import annotations

import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Sequence

import numpy as np

from ics16._util import Rational, as_fraction, mix64
from ics16.ecc import EccCode, Instr, check_received, pair_distances, questions_within
from ics16.errors import MalformedMessage
from ics16.graph import ROOT, EdgeLabel, GraphParams, Vertex, apply_edge, follow_path
from ics16.layered_code import LayeredCode, ListDecoder

Pair = tuple[EdgeLabel, EdgeLabel]
STAY2: Pair = (EdgeLabel.STAY, EdgeLabel.STAY)


class Role(IntEnum):
    ALICE = 0
    BOB = 1

    @property
    def other(self) -> "Role":
        return Role(1 - self)

    @property
    def tag(self) -> str:
        return "alice" if self == Role.ALICE else "bob"


# --- noiseless protocols -------------------------------------------------------


class NoiselessProtocol(ABC):
    """Alternating protocol of even length ``n0``; Alice speaks at even 0-indexed positions."""

    n0: int

    @abstractmethod
    def next_bit(self, role: Role, inp: int, prefix: str) -> int:
        """Bit the speaker ``role`` sends after ``prefix`` (only meaningful on its own turn)."""

    def speaker(self, length: int) -> Role:
        return Role(length % 2)

    def is_consistent(self, role: Role, inp: int, t: str) -> bool:
        for j in range(int(role), min(len(t), self.n0), 2):
            if int(t[j]) != self.next_bit(role, inp, t[:j]):
                return False
        return len(t) <= self.n0

    def transcript(self, x: int, y: int) -> str:
        t = ""
        for j in range(self.n0):
            role = self.speaker(j)
            t += str(self.next_bit(role, x if role == Role.ALICE else y, t))
        return t

    def descriptor(self) -> dict:
        return {"kind": type(self).__name__, "n0": self.n0}


@dataclass(frozen=True)
class RandomTreeProtocol(NoiselessProtocol):
    """Seeded random protocol tree; each bit is a PRF of (seed, role, input, prefix)."""

    n0: int
    seed: int

    def next_bit(self, role: Role, inp: int, prefix: str) -> int:
        if role == Role.ALICE and prefix == "":
            return 1
        idx = (1 << len(prefix)) - 1 + (int(prefix, 2) if prefix else 0)
        h = mix64(mix64(mix64(self.seed ^ (int(role) << 62)) ^ inp) ^ idx)
        return h & 1

    def descriptor(self) -> dict:
        return {"kind": "random", "n0": self.n0, "seed": self.seed}


@dataclass(frozen=True)
class ExchangeProtocol(NoiselessProtocol):
    """Alice sends 1 then the bits of x; Bob sends the bits of y, interleaved."""

    n0: int

    def next_bit(self, role: Role, inp: int, prefix: str) -> int:
        j = len(prefix)
        if role == Role.ALICE:
            if j == 0:
                return 1
            return (inp >> (j // 2 - 1)) & 1
        return (inp >> (j // 2)) & 1

    def descriptor(self) -> dict:
        return {"kind": "exchange", "n0": self.n0}


def protocol_from_descriptor(d: dict) -> NoiselessProtocol:
    if d["kind"] == "random":
        return RandomTreeProtocol(int(d["n0"]), int(d["seed"]))
    if d["kind"] == "exchange":
        return ExchangeProtocol(int(d["n0"]))
    raise ValueError(f"unknown protocol kind {d['kind']!r}")


# --- update algebra --------------------------------------------------------------


def in_S(role: Role, length: int, n0: int) -> bool:
    """Whether ``length`` is a length where ``role`` speaks.

    Length ``-1`` (one below the empty transcript) counts as odd, so it is in
    Bob's set and not Alice's.
    """
    if length >= n0:
        return False
    return length % 2 == int(role)


def op_r(proto: NoiselessProtocol, role: Role, inp: int, t: str) -> EdgeLabel:
    if not proto.is_consistent(role, inp, t):
        return EdgeLabel.BACK
    if in_S(role, len(t), proto.n0):
        return EdgeLabel(proto.next_bit(role, inp, t))
    return EdgeLabel.ONE


def op_target(target: str, t: str) -> EdgeLabel:
    if t == target:
        return EdgeLabel.ONE
    if len(t) < len(target) and target.startswith(t):
        return EdgeLabel(int(target[len(t)]))
    return EdgeLabel.BACK


def _after(t: str, e: EdgeLabel) -> str:
    if e == EdgeLabel.ZERO or e == EdgeLabel.ONE:
        return t + str(int(e))
    if e == EdgeLabel.BACK:
        return t[:-1]
    return t


def otimes_step(
    t: str, w: int, delta_hat: EdgeLabel, role: Role, inp: int, proto: NoiselessProtocol
) -> tuple[Pair, int]:
    """The pair appended to ``U`` and the new weight, given ``t = t(v(U))``."""
    n0 = proto.n0
    if delta_hat == EdgeLabel.STAY:
        return STAY2, w
    if delta_hat == EdgeLabel.BACK:
        if w > 0:
            return STAY2, w - 1
        if in_S(role, len(t) - 1, n0):
            return (EdgeLabel.BACK, EdgeLabel.BACK), w
        return (EdgeLabel.BACK, EdgeLabel.STAY), w
    if len(t) == n0:
        return STAY2, w + 1
    if in_S(role, len(t) - 1, n0):
        if len(t) == n0 - 1:
            return (delta_hat, EdgeLabel.STAY), 0
        return (delta_hat, op_r(proto, role, inp, _after(t, delta_hat))), 0
    return (EdgeLabel.STAY, op_r(proto, role, inp, t)), 0


def apply_pair(t: str, pair: Pair) -> str:
    return _after(_after(t, pair[0]), pair[1])


def otimes(
    U: Sequence[Pair], w: int, delta_hat: EdgeLabel, role: Role, inp: int, proto: NoiselessProtocol
) -> tuple[list[Pair], int]:
    t = ""
    for pair in U:
        t = apply_pair(t, pair)
    pair, w2 = otimes_step(t, w, delta_hat, role, inp, proto)
    return list(U) + [pair], w2


# --- scheme and party state -------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    """Everything both parties share: the layered code, the ECC and the noiseless protocol."""

    proto: NoiselessProtocol
    code: LayeredCode
    ecc: EccCode
    K: int
    code_epsilon: Fraction

    def __post_init__(self) -> None:
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be even and >= 2, got {self.K}")
        if self.code.params.depth < 2 * self.K + 2:
            raise ValueError(f"code depth {self.code.params.depth} < 2K + 2 = {2 * self.K + 2}")
        if self.code.params.n0 != self.proto.n0:
            raise ValueError("code and protocol disagree on n0")
        if self.code.alphabet_size != self.ecc.alphabet_size:
            raise ValueError("code and ECC alphabets differ")

    @property
    def n0(self) -> int:
        return self.proto.n0

    @property
    def M(self) -> int:
        return self.ecc.M

    @classmethod
    def build(
        cls,
        proto: NoiselessProtocol,
        code_seed: int,
        ecc: EccCode,
        epsilon: Rational,
        K: int | None = None,
    ) -> "Scheme":
        eps = as_fraction(epsilon)
        if K is None:
            K = int(Fraction(proto.n0) / eps)
            K += K % 2
        params = GraphParams(proto.n0, 2 * K + 2)
        return cls(proto, LayeredCode(code_seed, ecc.alphabet_size, params), ecc, K, eps)


@dataclass
class PartyState:
    role: Role
    inp: int
    scheme: Scheme
    U: list[Pair] = field(default_factory=list)
    w: int = 0
    P: list[tuple[int, int]] = field(default_factory=list)
    asked: bool = False
    round: int = 0
    vertex: Vertex = ROOT
    symbols: list[int] = field(default_factory=list)  # C(U) as base symbols
    _decoder: ListDecoder | None = field(default=None, repr=False)

    @property
    def transcript(self) -> str:
        return self.vertex.transcript

    @property
    def decoder(self) -> ListDecoder:
        if self._decoder is None:
            self._decoder = ListDecoder(self.scheme.code, self.scheme.code_epsilon)
        return self._decoder

    def push(self, pair: Pair) -> None:
        params = self.scheme.code.params
        for e in pair:
            self.symbols.append(self.scheme.code.label(self.vertex, e))
            self.vertex = apply_edge(self.vertex, e, params)
        self.U.append(pair)

    def last_pair_symbols(self) -> tuple[int, int]:
        return (self.symbols[-2], self.symbols[-1])

    def apply(self, delta_hat: EdgeLabel) -> None:
        pair, self.w = otimes_step(self.transcript, self.w, delta_hat, self.role, self.inp, self.scheme.proto)
        self.push(pair)

    def snapshot(self) -> dict:
        return {
            "U": ["".join(e.glyph for e in pair) for pair in self.U],
            "P": [list(p) for p in self.P],
            "w": self.w,
            "transcript": self.transcript,
            "asked": self.asked,
        }


def new_party(scheme: Scheme, role: Role, inp: int) -> PartyState:
    return PartyState(role=role, inp=inp, scheme=scheme)


@dataclass(frozen=True)
class Reception:
    """What one reception did: the case taken and the state before and after."""

    case: str  # "1", "2.1", "2.2", "2.3", "3"
    instruction: str | None  # glyph of the update applied, "." if a coin declined
    before: tuple[str, int]
    after: tuple[str, int]
    sent_kind: str  # "question" or "answer"
    coin: int | None = None
    threshold: int | None = None


def first_message(state: PartyState) -> tuple[PartyState, int]:
    if state.role != Role.ALICE or state.round != 0:
        raise ValueError("only a fresh Alice sends the first message")
    state.push((EdgeLabel.STAY, EdgeLabel.ONE))
    z = state.last_pair_symbols()
    state.P.append(z)
    state.asked = True
    state.round = 1
    return state, state.scheme.ecc.encode(z, Instr.ASK)


def _instr_to_edge(d: Instr) -> EdgeLabel:
    return EdgeLabel.ONE if d == Instr.ASK else EdgeLabel(int(d))


def receive_and_respond(
    state: PartyState, payload: int | None, rng: random.Random, length: int | None = None
) -> tuple[PartyState, int, Reception]:
    """Process one received message and produce the reply payload.

    A payload of the wrong length (or ``None``) is treated as far from every
    codeword and falls through to Case 3.
    """
    sc = state.scheme
    ecc = sc.ecc
    M = ecc.M
    eps = ecc.params.epsilon
    before = (state.transcript, state.w)

    # d <= 1/6 - eps  <=>  6 * D * den <= (den - 6 * num) * M
    num, den = eps.numerator, eps.denominator
    radius = ((den - 6 * num) * M) // (6 * den)
    try:
        if payload is None:
            raise MalformedMessage("no payload")
        check_received(ecc, payload, length)
        case2_idx, case2_d = questions_within(ecc, payload, radius)
    except (MalformedMessage, ValueError):
        payload = None
        case2_idx = case2_d = np.zeros(0, dtype=np.int64)

    state.apply(EdgeLabel.STAY)
    z_own = state.last_pair_symbols()

    case1 = None
    if state.asked and payload is not None:
        own_d = pair_distances(ecc, payload, z_own)
        hits = [d for d in Instr if 3 * own_d[d] < M]
        assert len(hits) <= 1, "two instructions within 1/3 of one pair"
        if hits:
            case1, dist1 = hits[0], own_d[hits[0]]

    assert case2_idx.size <= 1, "two pairs within 1/6 - eps of a question"
    if case1 is not None and case2_idx.size:
        assert int(case2_idx[0]) == ecc.z_index(z_own) and case1 == Instr.ASK, "Case 1 and Case 2 overlap"

    coin = threshold = None
    instruction = None
    if case1 is not None:
        threshold = M - 3 * dist1
        coin = rng.randrange(M)
        delta_hat = _instr_to_edge(case1) if coin < threshold else EdgeLabel.STAY
        state.apply(delta_hat)
        instruction = delta_hat.glyph
        zeta = state.last_pair_symbols()
        state.P += [z_own, zeta]
        out, kind, asked, case = ecc.encode(zeta, Instr.ASK), "question", True, "1"
    elif case2_idx.size:
        zi = int(case2_idx[0])
        z_star = ecc.z_pair(zi)
        dist = int(case2_d[0])
        word = [s for pair in state.P for s in pair] + list(z_star)
        result = state.decoder.decode(word)
        if not result.is_unique:
            case = "2.1"
            state.apply(EdgeLabel.STAY)
            instruction = "."
            zeta = state.last_pair_symbols()
            out, kind, asked = ecc.encode(zeta, Instr.ASK), "question", True
        else:
            v_star = result.vertex
            t_star = v_star.transcript
            if len(t_star) == sc.n0 and sc.proto.is_consistent(state.role, state.inp, t_star):
                case = "2.2"
                threshold = M // 2 - 3 * dist
                coin = rng.randrange(M)
                delta_hat = op_target(t_star, state.transcript) if coin < threshold else EdgeLabel.STAY
                state.apply(delta_hat)
                instruction = delta_hat.glyph
                zeta = state.last_pair_symbols()
                out, kind, asked = ecc.encode(zeta, Instr.ASK), "question", True
            else:
                case = "2.3"
                state.apply(EdgeLabel.STAY)
                instruction = "."
                threshold = M - 6 * dist
                coin = rng.randrange(M)
                if coin < threshold:
                    delta = op_r(sc.proto, state.role, state.inp, t_star)
                    params = sc.code.params
                    v1 = apply_edge(v_star, EdgeLabel.STAY, params)
                    zeta = (sc.code.label(v_star, EdgeLabel.STAY), sc.code.label(v1, EdgeLabel.STAY))
                    out, kind, asked = ecc.encode(zeta, Instr(int(delta))), "answer", False
                else:
                    zeta = state.last_pair_symbols()
                    out, kind, asked = ecc.encode(zeta, Instr.ASK), "question", True
        state.P += [z_star, zeta]
    else:
        case = "3"
        state.apply(EdgeLabel.STAY)
        instruction = "."
        zeta = state.last_pair_symbols()
        state.P += [(0, 0), zeta]
        out, kind, asked = ecc.encode(zeta, Instr.ASK), "question", True

    state.asked = asked
    state.round += 1
    info = Reception(case, instruction, before, (state.transcript, state.w), kind, coin, threshold)
    return state, out, info


@dataclass(frozen=True)
class PartyOutput:
    transcript: str
    confidence: Fraction

    def to_dict(self) -> dict:
        return {"transcript": self.transcript, "confidence": str(self.confidence)}


def output(state: PartyState, K: int) -> PartyOutput:
    return PartyOutput(state.transcript, min(Fraction(1), Fraction(2 * state.w, K)))


def vertex_of(U: Sequence[Pair], params: GraphParams) -> Vertex:
    return follow_path(ROOT, [e for pair in U for e in pair], params)
