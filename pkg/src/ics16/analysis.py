"""Update classification, potentials, the S-set diagnostic and scaling evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

from scipy.stats import binomtest

from ics16._util import Rational, as_fraction
from ics16.errors import MixedConfigs
from ics16.graph import ROOT, EdgeLabel, GraphParams, apply_edge
from ics16.layered_code import LayeredCode, ListDecoder
from ics16.protocol import NoiselessProtocol, Role, apply_pair, op_target, otimes_step


class UpdateClass(str, Enum):
    GOOD = "good"
    BAD = "bad"
    NEUTRAL = "neutral"


def classify_update(
    before: tuple[str, int],
    after: tuple[str, int],
    truth: str,
    role: Role,
    inp: int,
    proto: NoiselessProtocol,
) -> UpdateClass:
    """Compare one reception's net change with the step toward ``truth``.

    The counterfactual is ``(U, w) (x) op_truth(t(v(U)))``; the update is good
    when the realized transcript and weight both match it.  Layers always
    match, so only transcripts and weights are compared.
    """
    t, w = before
    pair, w_cf = otimes_step(t, w, op_target(truth, t), role, inp, proto)
    if (apply_pair(t, pair), w_cf) == tuple(after):
        return UpdateClass.GOOD
    if tuple(after) == (t, w):
        return UpdateClass.NEUTRAL
    return UpdateClass.BAD


def psi_steps(classes: Iterable[UpdateClass | str | None]) -> list[int]:
    """Running good-minus-bad count; ``None`` entries (no update by this party) carry the value."""
    out, psi = [], 0
    for c in classes:
        if c is not None:
            c = UpdateClass(c)
            psi += (c == UpdateClass.GOOD) - (c == UpdateClass.BAD)
        out.append(psi)
    return out


def psi_trace(record, party: Role | str) -> list[int]:
    """``psi_t`` for ``t = 1..K`` from a run record's per-message classifications."""
    role = party if isinstance(party, Role) else Role[party.upper()]
    return psi_steps(m["class"] if m["receiver"] == role.tag else None for m in record.messages)


def lemma_n_holds(psi: int, transcript: str, w: int, truth: str, n0: int) -> bool:
    """``psi >= n0/2`` iff the transcript is correct, with the matching weight bounds."""
    if 2 * psi >= n0:
        return transcript == truth and 2 * w >= 2 * psi - n0
    return transcript != truth and 2 * w <= n0 - 2 * psi


def lemma_n_violations(record) -> list[dict]:
    """Recheck Lemma N at every message of a recorded run."""
    out = []
    # after Alice's first message: she holds "1", Bob holds the empty transcript
    state = {"alice": ("1", 0), "bob": ("", 0)}
    psi = {"alice": 0, "bob": 0}
    for m in record.messages:
        who = m["receiver"]
        c = UpdateClass(m["class"])
        psi[who] += (c == UpdateClass.GOOD) - (c == UpdateClass.BAD)
        state[who] = tuple(m["after"])
        for party in ("alice", "bob"):
            t, w = state[party]
            if not lemma_n_holds(psi[party], t, w, record.truth, record.n0):
                out.append({"k": m["k"], "party": party, "psi": psi[party], "transcript": t, "w": w})
    return out


# --- the S-set ------------------------------------------------------------------


def _flatten(pairs: Sequence[Sequence[int]]) -> list[int]:
    return [int(s) for pair in pairs for s in pair]


def _parse_U(U: Sequence[str]) -> list[tuple[EdgeLabel, EdgeLabel]]:
    return [tuple(EdgeLabel.parse(p)) for p in U]


def compute_S(
    U_A: Sequence, U_B: Sequence, P_A: Sequence, P_B: Sequence, code: LayeredCode, epsilon: Rational, K: int
) -> set[int]:
    """Rounds ``k in 1..K`` where condition (i) or (ii) fails.

    (i)  ``C(U_P)[k] == P_P'[k]`` implies ``CDec(P_P'[1:k]) == v(U_P[1:k])``
    (ii) ``C(U_A)[k] == C(U_B)[k]`` implies ``v(U_A[1:k]) == v(U_B[1:k])``
    Rounds are symbol-pair indices; CDec runs on the ``2k`` base symbols.
    """
    eps = as_fraction(epsilon)
    params: GraphParams = code.params
    Us = {"A": _as_pairs(U_A), "B": _as_pairs(U_B)}
    Ps = {"A": [tuple(p) for p in P_A], "B": [tuple(p) for p in P_B]}
    codes, verts = {}, {}
    for who, U in Us.items():
        v = ROOT
        syms, vs = [], [v]
        for pair in U:
            for e in pair:
                syms.append(code.label(v, e))
                v = apply_edge(v, e, params)
            vs.append(v)
        codes[who] = [tuple(syms[2 * i : 2 * i + 2]) for i in range(len(U))]
        verts[who] = vs  # verts[who][k] = v(U[1:k])
    decoded = {}
    for who, P in Ps.items():
        n = min(len(P), K)
        if n == 0:
            decoded[who] = []
            continue
        lists = ListDecoder(code, eps).all_lists(_flatten(P[:n]))
        decoded[who] = [lists[2 * k - 1] for k in range(1, n + 1)]
    out = set()
    for k in range(1, K + 1):
        bad = False
        for p in "AB":
            for q in "AB":
                if k > len(codes[p]) or k > len(decoded[q]):
                    continue
                if codes[p][k - 1] == Ps[q][k - 1]:
                    listed = decoded[q][k - 1]
                    if listed != {verts[p][k]}:
                        bad = True
        if k <= len(codes["A"]) and k <= len(codes["B"]):
            if codes["A"][k - 1] == codes["B"][k - 1] and verts["A"][k] != verts["B"][k]:
                bad = True
        if bad:
            out.add(k)
    return out


def _as_pairs(U: Sequence) -> list[tuple[EdgeLabel, EdgeLabel]]:
    if U and isinstance(U[0], str):
        return _parse_U(U)
    return [tuple(EdgeLabel(e) for e in pair) for pair in U]


def compute_S_record(record, code: LayeredCode | None = None) -> set[int]:
    code = code or record.layered_code()
    fa, fb = record.final["alice"], record.final["bob"]
    return compute_S(fa["U"], fb["U"], fa["P"], fb["P"], code, record.code_epsilon, record.K)


# --- scaling evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class ScalingVerdict:
    rho: Fraction
    eps_prime: Fraction
    n_runs: int
    scaling1_runs: int
    scaling1_ok: int
    scaling2_runs: int
    scaling2_ok: int
    scaling1_ci: tuple[float, float] | None
    scaling2_ci: tuple[float, float] | None
    per_run: tuple[dict, ...]

    @property
    def scaling1_rate(self) -> float | None:
        return self.scaling1_ok / self.scaling1_runs if self.scaling1_runs else None

    @property
    def scaling2_rate(self) -> float | None:
        return self.scaling2_ok / self.scaling2_runs if self.scaling2_runs else None

    def to_dict(self) -> dict:
        return {
            "rho": str(self.rho),
            "eps_prime": str(self.eps_prime),
            "n_runs": self.n_runs,
            "scaling1": {"runs": self.scaling1_runs, "ok": self.scaling1_ok, "wilson95": self.scaling1_ci},
            "scaling2": {"runs": self.scaling2_runs, "ok": self.scaling2_ok, "wilson95": self.scaling2_ci},
        }


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float] | None:
    if n == 0:
        return None
    ci = binomtest(successes, n).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


def _run_verdict(delta: Fraction, truth: str, outputs: dict, rho: Fraction, eps: Fraction) -> dict:
    ta, tb = outputs["alice"]["transcript"], outputs["bob"]["transcript"]
    ca, cb = Fraction(outputs["alice"]["confidence"]), Fraction(outputs["bob"]["confidence"])
    if delta < (1 - eps) * rho:
        bound = 1 - delta / rho - eps
        ok = ta == tb == truth and ca >= bound and cb >= bound
        return {"delta": str(delta), "clause": 1, "ok": ok}
    bound = delta / rho - 1 + eps

    def party_ok(t, c):
        return t == truth or c <= bound

    return {"delta": str(delta), "clause": 2, "ok": party_ok(ta, ca) and party_ok(tb, cb)}


def scaling_eval(records: Sequence, rho: Rational, eps_prime: Rational) -> ScalingVerdict:
    """Empirical check of the two scaling clauses over a batch from one configuration family.

    Clause 1 (``delta < (1 - eps') rho``): both parties output the true
    transcript with confidence at least ``1 - delta/rho - eps'``.  Clause 2
    (otherwise): a party with a wrong transcript has confidence at most
    ``delta/rho - 1 + eps'``.
    """
    rho, eps = as_fraction(rho), as_fraction(eps_prime)
    families = {r.family_hash for r in records}
    if len(families) > 1:
        raise MixedConfigs(f"{len(families)} configuration families in one batch")
    per_run = [_run_verdict(r.delta, r.truth, r.outputs, rho, eps) for r in records]
    s1 = [v for v in per_run if v["clause"] == 1]
    s2 = [v for v in per_run if v["clause"] == 2]
    ok1, ok2 = sum(v["ok"] for v in s1), sum(v["ok"] for v in s2)
    return ScalingVerdict(
        rho, eps, len(records), len(s1), ok1, len(s2), ok2,
        wilson_interval(ok1, len(s1)), wilson_interval(ok2, len(s2)), tuple(per_run),
    )


SUMMARY_COLUMNS = (
    "alpha",
    "n_runs",
    "success_rate",
    "mean_confidence_correct",
    "mean_confidence_wrong",
    "conf_wrong_max",
    "S_size_mean",
    "psi_final_mean",
)


def summary_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
