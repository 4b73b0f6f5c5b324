import json
from fractions import Fraction

import pytest

from ics16.channel import (
    Burst,
    NearestOtherCodeword,
    NoAdversary,
    QuestionJammer,
    RandomFlips,
    RunRecord,
    Scripted,
    SessionConfig,
    _is_question,
    _nearest_shift,
    add_observer,
    adversary_from_descriptor,
    aggregate,
    budget_for,
    derive_run_config,
    monte_carlo,
    remove_observer,
    replay,
    run_session,
)
from ics16.ecc import Instr, distance_profile, verify_distances
from ics16.errors import BudgetViolation

CFG = SessionConfig(n0=4, epsilon="1/4", protocol_seed=5, code_seed=6, x=3, y=12, alpha="1/10")

ADVERSARIES = [
    NoAdversary(1),
    RandomFlips("1/50", seed=2),
    Burst(start=3, length=2),
    NearestOtherCodeword(seed=4),
    NearestOtherCodeword(per_message="1/8", seed=5),
    QuestionJammer(seed=6),
    QuestionJammer(per_message="1/4", answer="0", seed=7),
]


def test_budget_for():
    assert budget_for("1/10", 16, 2124) == 3398
    assert budget_for(0, 16, 2124) == 0
    assert budget_for(1, 4, 6) == 24


@pytest.mark.parametrize("adv", ADVERSARIES, ids=lambda a: f"{a.kind}-{a.seed}")
def test_budget_and_bookkeeping(adv):
    rec = run_session(CFG, adv)
    assert rec.total_flips <= rec.budget == budget_for(CFG.alpha, rec.K, rec.M)
    assert len(rec.messages) == rec.K == 16
    width = (rec.M + 3) // 4
    for m in rec.messages:
        sent, got = int(m["sent"], 16), int(m["delivered"], 16)
        assert len(m["sent"]) == len(m["delivered"]) == width
        assert sent.bit_length() <= rec.M and got.bit_length() <= rec.M
        assert (sent ^ got).bit_count() == m["flips"]
        assert m["sender"] == ("alice" if m["k"] % 2 else "bob")
    assert all(0 <= a <= 1 for a in rec.alphas)
    assert rec.delta == Fraction(rec.total_flips, rec.K * rec.M)


@pytest.mark.parametrize("adv", ADVERSARIES, ids=lambda a: f"{a.kind}-{a.seed}")
def test_replay_is_byte_identical(adv):
    rec = run_session(CFG, adv)
    again = replay(rec)
    assert again.to_json() == rec.to_json()
    assert RunRecord.from_json(rec.to_json()) == rec


def test_scripted_full_flip_of_message_two():
    M = CFG.ecc().M
    cfg = SessionConfig(**{**CFG.to_dict(), "alpha": "1/16"})
    rec = run_session(cfg, Scripted({2: (1 << M) - 1}))
    alphas = rec.alphas
    assert alphas[1] == 1
    assert all(a == 0 for i, a in enumerate(alphas) if i != 1)
    assert Burst(2, 1).descriptor() == {"kind": "burst", "seed": 0, "start": 2, "length": 1}


def test_overdraw_raises():
    M = CFG.ecc().M
    cfg = SessionConfig(**{**CFG.to_dict(), "alpha": "0"})
    with pytest.raises(BudgetViolation):
        run_session(cfg, Scripted({1: 1}))
    with pytest.raises(BudgetViolation):
        run_session(CFG, Scripted({1: 1 << M}))


def test_same_seed_same_record():
    a = run_session(CFG, RandomFlips("1/40", seed=9))
    b = run_session(CFG, RandomFlips("1/40", seed=9))
    assert a.to_json() == b.to_json()


def test_nearest_shift_is_minimum_distance():
    ecc = CFG.ecc()
    shift = _nearest_shift(ecc)
    rep = verify_distances(ecc)
    assert shift.bit_count() == min(rep.min_cross_z, rep.min_same_z)
    word = ecc.encode((7, 200), Instr.ONE) ^ shift
    # the shifted word is itself a codeword
    assert int(distance_profile(ecc, word).min()) == 0


def test_question_detection():
    ecc = CFG.ecc()
    assert _is_question(ecc, ecc.encode((3, 4), Instr.ASK))
    assert not _is_question(ecc, ecc.encode((3, 4), Instr.ZERO))
    assert _is_question(ecc, 0)


def test_jammer_turns_question_into_answer():
    rec = run_session(SessionConfig(**{**CFG.to_dict(), "alpha": "1"}), QuestionJammer(answer="<"))
    m = rec.messages[0]
    assert m["kind"] == "question"
    assert int(m["sent"], 16) ^ int(m["delivered"], 16) == int("110" * (rec.M // 3), 2)


def test_adversary_descriptors_roundtrip():
    for adv in ADVERSARIES + [Scripted({3: 0xF0})]:
        again = adversary_from_descriptor(adv.descriptor())
        assert again.descriptor() == adv.descriptor()
    assert adversary_from_descriptor(None).kind == "none"
    with pytest.raises(ValueError):
        adversary_from_descriptor({"kind": "meteor"})


def test_config_hashes():
    a = derive_run_config(CFG, 1, 0)
    b = derive_run_config(CFG, 1, 1)
    assert a.config_hash() != b.config_hash()
    assert a.family_hash() == b.family_hash()
    assert a.family_hash({"kind": "random", "rate": "1/9", "seed": 1}) == b.family_hash({"kind": "random", "rate": "1/9", "seed": 2})
    assert a.family_hash({"kind": "random", "rate": "1/9"}) != a.family_hash({"kind": "random", "rate": "1/8"})
    assert SessionConfig.from_dict(json.loads(json.dumps(CFG.to_dict()))) == CFG
    assert SessionConfig(epsilon=0.25).epsilon == "1/4"


def test_tiny_instance():
    # with K = 4 Bob's only chance to adopt the complete transcript is one
    # Subcase 2.2 coin of probability 1/2, so joint success sits near one half
    cfg = SessionConfig(n0=2, epsilon="1/2", K=4)
    stats = monte_carlo(cfg, None, 60, seed=5, keep_records=True)
    alice = sum(r.outputs["alice"]["transcript"] == r.truth for r in stats.records)
    bob = sum(r.outputs["bob"]["transcript"] == r.truth for r in stats.records)
    assert alice >= 55
    assert 15 <= bob <= 45
    assert stats.successes <= bob


def test_monte_carlo_single_and_deterministic():
    one = monte_carlo(CFG, {"kind": "random", "rate": "1/100"}, 1, seed=3, keep_records=True)
    rec = one.records[0]
    assert one.n_runs == 1 and one.successes == int(rec.success())
    assert one.S_size_sum == len(rec.S)
    a = monte_carlo(CFG, {"kind": "nearest"}, 6, seed=3)
    b = monte_carlo(CFG, {"kind": "nearest"}, 6, seed=3)
    assert a.row() == b.row() and a.conf_histogram == b.conf_histogram
    with pytest.raises(ValueError):
        monte_carlo(CFG, None, 0, seed=1)


def test_monte_carlo_parallel_matches_serial():
    serial = monte_carlo(CFG, {"kind": "random", "rate": "1/30"}, 8, seed=11, keep_records=True)
    parallel = monte_carlo(CFG, {"kind": "random", "rate": "1/30"}, 8, seed=11, jobs=2, keep_records=True)
    assert [r.to_json() for r in serial.records] == [r.to_json() for r in parallel.records]
    assert serial.row() == parallel.row()


def test_aggregate_counts():
    recs = [run_session(derive_run_config(CFG, 2, i)) for i in range(4)]
    st = aggregate(recs, alpha=0)
    assert st.n_runs == 4
    assert st.correct_outputs + st.wrong_outputs == 8
    assert sum(st.conf_histogram.values()) == 8
    assert st.row()["alpha"] == "0"


def test_observers_see_records():
    seen = []
    add_observer(seen.append)
    try:
        run_session(CFG)
    finally:
        remove_observer(seen.append)
    run_session(CFG)
    assert len(seen) == 1
