import random
from fractions import Fraction

import pytest

from ics16.boosting import (
    BoostedInnerScheme,
    BoostInput,
    BoostParams,
    BoostParty,
    EdgeSet,
    InnerIterationProtocol,
    MockInnerScheme,
    RealInnerScheme,
    boost,
    boost_finalize,
    boost_iteration,
    default_beta,
    default_chunk,
    leaf_argmax,
    min_intersection_rounds,
    search_steps,
    tree_intersection,
)
from ics16.channel import SessionConfig
from ics16.errors import BudgetTooSmall, EmptyWeights
from ics16.protocol import PartyOutput, RandomTreeProtocol, Role

F = Fraction


# --- edge sets ------------------------------------------------------------------


def test_edge_set_basics():
    e = EdgeSet(["0110"])
    assert e.edges == {"0", "01", "011", "0110"}
    assert e.frontier == "0110"
    assert e.add_path("0111") == 1 and e.add_path("01") == 0
    assert e.frontier == "01"
    assert e.is_rooted() and len(e) == 5
    assert list(e) == ["0", "01", "011", "0110", "0111"]
    with pytest.raises(ValueError):
        e.add_path("01a")


def test_common_path_oracle():
    a, b = EdgeSet(["01101"]), EdgeSet(["01000"])
    assert a.common_path(b) == "01"
    assert EdgeSet(["0"]).common_path(EdgeSet(["1"])) == ""
    with pytest.raises(ValueError):
        EdgeSet(["00", "01"]).common_path(EdgeSet(["00", "01"]))


def test_rootedness_under_random_adds():
    rng = random.Random(0)
    e = EdgeSet()
    for _ in range(200):
        e.add_path("".join(rng.choice("01") for _ in range(rng.randrange(9))))
        assert e.is_rooted()


# --- tree intersection ------------------------------------------------------------


def test_search_sizes():
    assert [search_steps(n) for n in (1, 2, 3, 4, 7, 8, 16)] == [1, 2, 2, 3, 3, 4, 5]
    assert min_intersection_rounds(8) == 8


def test_tree_intersection_examples():
    p = "0110"
    assert tree_intersection(EdgeSet([p]), EdgeSet([p]), 40, seed=1).path == p
    assert tree_intersection(EdgeSet(["01101"]), EdgeSet(["01000"]), 60, seed=1).path == "01"
    assert tree_intersection(EdgeSet(["0"]), EdgeSet(["1"]), 40, seed=1).path == ""


def test_tree_intersection_budget():
    r = tree_intersection(EdgeSet(["0110"]), EdgeSet(["0111"]), 13, seed=2, n0=4)
    assert r.fp_bits == 2 and r.rounds == len(r.transcript) == 12
    with pytest.raises(BudgetTooSmall):
        tree_intersection(EdgeSet(["0110"]), EdgeSet(["0111"]), 5, seed=2, n0=4)


def test_tree_intersection_matches_oracle():
    rng = random.Random(3)
    wrong = 0
    for trial in range(300):
        n0 = 8
        base = "".join(rng.choice("01") for _ in range(rng.randrange(n0 + 1)))
        pa = base + "".join(rng.choice("01") for _ in range(rng.randrange(n0 - len(base) + 1)))
        pb = base + "".join(rng.choice("01") for _ in range(rng.randrange(n0 - len(base) + 1)))
        ea, eb = EdgeSet([pa]), EdgeSet([pb])
        res = tree_intersection(ea, eb, 2 * search_steps(n0) * 20, seed=trial, n0=n0)
        wrong += res.path != ea.common_path(eb)
    assert wrong == 0


def test_tree_intersection_error_shrinks_with_budget():
    rng = random.Random(4)
    errs = {}
    for fp in (1, 8, 16):
        errs[fp] = 0
        for trial in range(400):
            pa = "".join(rng.choice("01") for _ in range(8))
            pb = pa[:3] + ("1" if pa[3] == "0" else "0") + "".join(rng.choice("01") for _ in range(4))
            res = tree_intersection(EdgeSet([pa]), EdgeSet([pb]), 2 * 4 * fp, seed=trial, n0=8)
            errs[fp] += res.path != pa[:3]
    # collisions are bounded by steps * 2**-fp per search
    assert errs[16] == 0
    assert errs[8] <= 400 * 4 / 2**8 < errs[1]


# --- the iteration protocol ---------------------------------------------------------


def test_iteration_protocol_shape():
    outer = RandomTreeProtocol(8, 5)
    proto = InnerIterationProtocol(outer, chunk=2, fp_bits=1, seed=9)
    assert proto.n0 == 14  # header, 8 search bits, 2 slot pairs, pad
    for x in range(4):
        for y in range(4):
            inp_a, inp_b = BoostInput(x, ""), BoostInput(y, "")
            assert proto.transcript(inp_a, inp_b)[0] == "1"


def test_iteration_protocol_parse_reads_outer_rounds():
    outer = RandomTreeProtocol(8, 6)
    rng = random.Random(6)
    for _ in range(40):
        x, y = rng.getrandbits(8), rng.getrandbits(8)
        truth = outer.transcript(x, y)
        cut = rng.randrange(9)
        proto = InnerIterationProtocol(outer, chunk=3, fp_bits=6, seed=rng.getrandbits(32))
        inp_a, inp_b = BoostInput(x, truth[:cut]), BoostInput(y, truth[: rng.randrange(cut, 9)])
        t = proto.transcript(inp_a, inp_b)
        for role, inp in ((Role.ALICE, inp_a), (Role.BOB, inp_b)):
            p, ext = proto.parse(role, inp, t)
            assert p == truth[:cut]
            assert ext == truth[cut : cut + 3]
        assert proto.parse(Role.ALICE, inp_a, t[:3]) == (None, "")


# --- voting ------------------------------------------------------------------------


def test_finalize_examples():
    T, T2 = "0110", "1001"
    assert boost_finalize({T: 4}, 4) == PartyOutput(T, F(1))
    assert boost_finalize({T: 3, T2: 1}, 4) == PartyOutput(T, F(1, 2))
    assert boost_finalize({T: 2, T2: 2}, 4) == PartyOutput(T, F(0))
    assert boost_finalize({}, 4) == PartyOutput("", F(0))
    assert boost_finalize({}, 0) == PartyOutput("", F(0))
    with pytest.raises(ValueError):
        boost_finalize({T: 1}, 0)
    with pytest.raises(EmptyWeights):
        leaf_argmax({T: 0})


def test_defaults():
    assert default_chunk(8) == 8 and default_chunk(2) == 2 and default_chunk(64) == 64
    assert default_beta(8, F(1, 4), 2) == 16
    p = BoostParams.for_protocol(8, chunk_size=2)
    assert (p.chunk_size, p.beta, p.intersection_rounds) == (2, 16, 8)
    with pytest.raises(ValueError):
        BoostParams(0, 1, 8)


def _parties(outer, x, y):
    return BoostParty(Role.ALICE, x), BoostParty(Role.BOB, y)


def test_first_iteration_adds_first_chunk():
    outer = RandomTreeProtocol(8, 7)
    x, y = 11, 12
    truth = outer.transcript(x, y)
    a, b = _parties(outer, x, y)
    params = BoostParams(3, 4, 8)
    info = boost_iteration(a, b, outer, MockInnerScheme(), params, seed=1)
    assert a.edges.edges == b.edges.edges == {truth[:i] for i in range(1, 4)}
    assert info["alice"]["added"] == 3 and info["intersection_length"] == 0


def test_complete_sets_vote():
    outer = RandomTreeProtocol(8, 7)
    x, y = 11, 12
    truth = outer.transcript(x, y)
    a, b = _parties(outer, x, y)
    a.edges.add_path(truth)
    b.edges.add_path(truth)
    boost_iteration(a, b, outer, MockInnerScheme(default_confidence=F(7, 8)), BoostParams(2, 4, 8), seed=1)
    assert a.leaves == b.leaves == {truth: F(7, 8)}
    boost_iteration(a, b, outer, MockInnerScheme(default_confidence=0), BoostParams(2, 4, 8), seed=2)
    assert a.leaves == {truth: F(7, 8)}


def test_mock_boost_end_to_end():
    outer = RandomTreeProtocol(8, 8)
    for seed in range(10):
        x, y = seed, 100 + seed
        params = BoostParams.for_protocol(8, chunk_size=2)
        res = boost(outer, x, y, MockInnerScheme(), params, seed)
        assert res.success()
        # four iterations build the path, the other twelve vote
        assert res.outputs["alice"].confidence == F(12, 16)
        assert sum(F(w) for w in res.leaves["alice"].values()) <= params.beta
        assert res.to_dict()["params"]["beta"] == 16
        assert '"truth"' in res.to_json()


def test_garbage_inner_outputs_only_vote_consistent():
    outer = RandomTreeProtocol(6, 9)
    rng = random.Random(9)
    for seed in range(8):
        x, y = rng.getrandbits(8), rng.getrandbits(8)
        params = BoostParams(2, 12, min_intersection_rounds(6))
        n_inner = 2 + 2 * search_steps(6) + 4
        script = [
            {who: ("".join(rng.choice("01") for _ in range(n_inner)), F(rng.randrange(5), 4)) for who in ("alice", "bob")}
            if rng.random() < 0.5 else {}
            for _ in range(params.beta)
        ]
        res = boost(outer, x, y, MockInnerScheme(script), params, seed)
        for who, inp, role in (("alice", x, Role.ALICE), ("bob", y, Role.BOB)):
            for t in res.leaves[who]:
                assert len(t) == 6 and outer.is_consistent(role, inp, t)
            assert sum(F(w) for w in res.leaves[who].values()) <= params.beta
            out = res.outputs[who]
            assert out.transcript == "" or outer.is_consistent(role, inp, out.transcript)


def test_boosted_scheme_stacks():
    outer = RandomTreeProtocol(4, 2)
    inner = BoostedInnerScheme(MockInnerScheme(), chunk_size=4, beta=4)
    res = boost(outer, 1, 2, inner, BoostParams(2, 6, min_intersection_rounds(4)), seed=3)
    assert res.success()


def test_real_inner_scheme_small():
    cfg = SessionConfig()
    inner = RealInnerScheme(cfg.ecc(), code_seed=5)
    outer = RandomTreeProtocol(4, 3)
    res = boost(outer, 2, 3, inner, BoostParams.for_protocol(4, chunk_size=2), seed=4)
    assert res.success()
    assert all(it["flips"] == 0 for it in res.iterations)
