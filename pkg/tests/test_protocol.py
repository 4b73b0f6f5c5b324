import copy
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from ics16.analysis import UpdateClass, classify_update
from ics16.channel import SessionConfig
from ics16.ecc import Instr
from ics16.graph import EdgeLabel, GraphParams, Vertex
from ics16.protocol import (
    STAY2,
    ExchangeProtocol,
    PartyOutput,
    RandomTreeProtocol,
    Role,
    apply_pair,
    first_message,
    in_S,
    new_party,
    op_r,
    op_target,
    otimes,
    otimes_step,
    output,
    protocol_from_descriptor,
    receive_and_respond,
    vertex_of,
)

Z, O, B, S = EdgeLabel.ZERO, EdgeLabel.ONE, EdgeLabel.BACK, EdgeLabel.STAY
ALICE, BOB = Role.ALICE, Role.BOB


# --- noiseless protocols ----------------------------------------------------


def test_alice_opens_with_one():
    for seed in range(50):
        for x in range(8):
            assert RandomTreeProtocol(6, seed).transcript(x, 3)[0] == "1"
    assert ExchangeProtocol(6).transcript(0b11, 0b101) == "111011"


def test_exchange_protocol_reveals_inputs():
    proto = ExchangeProtocol(8)
    for x in range(8):
        for y in range(16):
            t = proto.transcript(x, y)
            assert t[0] == "1"
            assert int(t[2::2][::-1], 2) == x
            assert int(t[1::2][::-1], 2) == y


def test_transcript_is_unique_consistent_leaf():
    proto = RandomTreeProtocol(6, 12)
    for x in range(4):
        for y in range(4):
            leaves = [
                format(v, "06b")
                for v in range(64)
                if proto.is_consistent(ALICE, x, format(v, "06b")) and proto.is_consistent(BOB, y, format(v, "06b"))
            ]
            assert leaves == [proto.transcript(x, y)]


def test_protocol_descriptor_roundtrip():
    for proto in (RandomTreeProtocol(4, 9), ExchangeProtocol(6)):
        assert protocol_from_descriptor(proto.descriptor()) == proto
    with pytest.raises(ValueError):
        protocol_from_descriptor({"kind": "nope", "n0": 2})


# --- op_r, op_target ---------------------------------------------------------


def test_in_S():
    assert in_S(ALICE, 0, 4) and not in_S(BOB, 0, 4)
    assert in_S(BOB, -1, 4) and not in_S(ALICE, -1, 4)
    assert not in_S(BOB, 4, 4) and not in_S(ALICE, 4, 4)


def test_op_r_examples():
    proto = ExchangeProtocol(4)
    x, y = 0b1, 0b10  # transcript 1 0 1 1
    assert proto.transcript(x, y) == "1011"
    assert op_r(proto, ALICE, x, "0") == B  # Alice never opens with 0
    assert op_r(proto, ALICE, x, "10") == O  # her turn: f_x
    assert op_r(proto, BOB, y, "1") == Z  # Bob's first bit is y's low bit
    assert op_r(proto, ALICE, x, "1") == O  # not her turn, consistent
    assert op_r(proto, ALICE, x, "1011") == O  # complete and consistent
    assert op_r(proto, BOB, y, "1111") == B


@pytest.mark.parametrize("target, t, expected", [("0110", "0110", O), ("0110", "01", O), ("0110", "00", B), ("0110", "", Z), ("0110", "011", Z)])
def test_op_target_examples(target, t, expected):
    assert op_target(target, t) == expected


# --- otimes ------------------------------------------------------------------


def test_otimes_examples():
    proto = ExchangeProtocol(4)
    x = 0b1
    U = [(S, O), (S, Z), (O, O)]  # t(v(U)) = "1011"
    assert apply_pair(apply_pair(apply_pair("", U[0]), U[1]), U[2]) == "1011"
    assert otimes(U, 3, B, ALICE, x, proto) == (U + [STAY2], 2)
    assert otimes(U, 0, S, ALICE, x, proto) == (U + [STAY2], 0)
    assert otimes(U, 5, O, ALICE, x, proto) == (U + [STAY2], 6)


def test_otimes_back_parity():
    proto = ExchangeProtocol(4)
    # |t| - 1 = 1 is Bob's length: Bob removes two edges, Alice one
    assert otimes_step("10", 0, B, BOB, 0, proto) == ((B, B), 0)
    assert otimes_step("10", 0, B, ALICE, 1, proto) == ((B, S), 0)


def test_otimes_bit_branches():
    proto = ExchangeProtocol(4)
    x, y = 0b1, 0b10
    # Bob holds "1" (|t| - 1 = 0 is Alice's): he appends his own answer, discarding the received bit
    assert otimes_step("1", 0, Z, BOB, y, proto) == ((S, Z), 0)
    assert otimes_step("1", 0, O, BOB, y, proto) == ((S, Z), 0)
    # Alice holds "1" (|t| - 1 = 0 is hers): she takes the bit, then replies
    assert otimes_step("1", 0, Z, ALICE, x, proto) == ((Z, op_r(proto, ALICE, x, "10")), 0)
    assert otimes_step("10", 0, Z, ALICE, x, proto) == ((S, O), 0)
    # one short of complete: the bit alone
    assert otimes_step("101", 0, O, ALICE, x, proto) == ((O, S), 0)
    assert otimes_step("101", 0, O, BOB, y, proto) == ((S, O), 0)


# --- update algebra laws over generated states ---------------------------------


@st.composite
def reachable(draw):
    n0 = draw(st.sampled_from([2, 4, 6]))
    proto = RandomTreeProtocol(n0, draw(st.integers(0, 2**32)))
    x, y = draw(st.integers(0, 255)), draw(st.integers(0, 255))
    role = draw(st.sampled_from([ALICE, BOB]))
    inp = x if role == ALICE else y
    U = [(S, O)] if role == ALICE else []
    t, w = apply_pair("", U[0]) if U else "", 0
    for d in draw(st.lists(st.sampled_from(list(EdgeLabel)), max_size=30)):
        pair, w = otimes_step(t, w, d, role, inp, proto)
        U.append(pair)
        t = apply_pair(t, pair)
    return proto, x, y, role, inp, U, t, w


LAWS = settings(max_examples=1000)


@LAWS
@given(reachable(), st.sampled_from(list(EdgeLabel)))
def test_law_pair_growth(state, d):
    proto, _, _, role, inp, U, t, w = state
    U2, w2 = otimes(U, w, d, role, inp, proto)
    assert len(U2) == len(U) + 1 and U2[: len(U)] == U
    params = GraphParams(proto.n0, 2 * len(U2))
    assert vertex_of(U2, params).transcript == apply_pair(t, U2[-1])
    assert vertex_of(U2, params).layer == 2 * len(U2)


@LAWS
@given(reachable())
def test_law_weight_needs_complete_transcript(state):
    proto, _, _, role, inp, U, t, w = state
    assert w == 0 or len(t) == proto.n0
    assert proto.is_consistent(role, inp, t)


@LAWS
@given(reachable(), st.sampled_from([Z, O, B]))
def test_law_bad_then_good_restores(state, d):
    proto, x, y, role, inp, U, t, w = state
    truth = proto.transcript(x, y)
    pair, w1 = otimes_step(t, w, d, role, inp, proto)
    t1 = apply_pair(t, pair)
    if classify_update((t, w), (t1, w1), truth, role, inp, proto) != UpdateClass.BAD:
        return
    pair, w2 = otimes_step(t1, w1, op_target(truth, t1), role, inp, proto)
    assert (apply_pair(t1, pair), w2) == (t, w)


# --- party state machine -------------------------------------------------------


@pytest.fixture(scope="module")
def scheme():
    return SessionConfig(n0=4, x=5, y=9, code_seed=3, protocol_seed=7).scheme()


def _z_after_stay(state):
    s = copy.deepcopy(state)
    s.apply(S)
    return s.last_pair_symbols()


def test_first_message(scheme):
    alice = new_party(scheme, ALICE, 5)
    alice, payload = first_message(alice)
    assert alice.U == [(S, O)]
    assert alice.transcript == "1"
    assert alice.asked
    z = alice.P[0]
    assert z == (scheme.code.label(Vertex("", 0), S), scheme.code.label(Vertex("", 1), O))
    assert payload == scheme.ecc.encode(z, Instr.ASK)
    with pytest.raises(ValueError):
        first_message(alice)
    with pytest.raises(ValueError):
        first_message(new_party(scheme, BOB, 9))


def test_case1_answer_one(scheme):
    alice, _ = first_message(new_party(scheme, ALICE, 5))
    z_a = _z_after_stay(alice)
    for instr, edge in ((Instr.ONE, O), (Instr.ASK, O), (Instr.ZERO, Z)):
        a = copy.deepcopy(alice)
        expected = otimes([(S, O), STAY2], 0, edge, ALICE, 5, scheme.proto)
        a, out, info = receive_and_respond(a, scheme.ecc.encode(z_a, instr), random.Random(0))
        assert info.case == "1" and info.threshold == scheme.M
        assert a.U == expected[0] and a.w == expected[1]
        assert info.sent_kind == "question" and a.asked
        assert out == scheme.ecc.encode(a.last_pair_symbols(), Instr.ASK)


def test_subcase_2_3_for_bob(scheme):
    alice, payload = first_message(new_party(scheme, ALICE, 5))
    bob = new_party(scheme, BOB, 9)
    bob, out, info = receive_and_respond(bob, payload, random.Random(0))
    assert info.case == "2.3" and info.threshold == scheme.M
    assert bob.U == [STAY2, STAY2] and bob.w == 0
    assert bob.P == [alice.P[0], bob.P[1]]
    v_star = Vertex("1", 2)
    delta = op_r(scheme.proto, BOB, 9, "1")
    zeta = (scheme.code.label(v_star, S), scheme.code.label(Vertex("1", 3), S))
    assert out == scheme.ecc.encode(zeta, Instr(int(delta)))
    assert info.sent_kind == "answer" and not bob.asked


def test_case3_on_noise(scheme):
    bob = new_party(scheme, BOB, 9)
    rng = random.Random(1)
    bob, out, info = receive_and_respond(bob, rng.getrandbits(scheme.M), random.Random(0))
    assert info.case == "3"
    assert bob.U == [STAY2, STAY2] and bob.P[0] == (0, 0)
    assert out == scheme.ecc.encode(bob.P[1], Instr.ASK)


def test_malformed_falls_to_case3(scheme):
    alice, payload = first_message(new_party(scheme, ALICE, 5))
    bob = new_party(scheme, BOB, 9)
    bob, _, info = receive_and_respond(bob, payload, random.Random(0), length=scheme.M - 1)
    assert info.case == "3"
    bob2 = new_party(scheme, BOB, 9)
    assert receive_and_respond(bob2, None, random.Random(0))[2].case == "3"


def test_output_rule(scheme):
    s = new_party(scheme, ALICE, 5)
    assert output(s, 16) == PartyOutput("", Fraction(0))
    s.w = 8
    assert output(s, 16).confidence == 1
    s.w = 3
    assert output(s, 16).confidence == Fraction(3, 8)
    assert output(s, 16).to_dict() == {"transcript": "", "confidence": "3/8"}


def test_random_traffic_invariants(scheme):
    # drive both parties by hand under heavy random noise and check every step
    rng = random.Random(8)
    proto = scheme.proto
    for trial in range(6):
        a, payload = first_message(new_party(scheme, ALICE, 5))
        b = new_party(scheme, BOB, 9)
        parties = [b, a]
        for k in range(2, scheme.K + 1):
            flips = sum(1 << p for p in rng.sample(range(scheme.M), rng.randrange(scheme.M // 4)))
            me = parties[k % 2]
            nu, np_ = len(me.U), len(me.P)
            me, payload, _ = receive_and_respond(me, payload ^ flips, rng)
            assert len(me.U) == nu + 2 and len(me.P) == np_ + 2
            assert proto.is_consistent(me.role, me.inp, me.transcript)
            assert me.w == 0 or len(me.transcript) == proto.n0
            assert vertex_of(me.U, scheme.code.params) == me.vertex
