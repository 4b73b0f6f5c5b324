"""Command-line front end.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override
values from the file.  The default seed comes from ``ICS_SEED`` when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from typing import Sequence

from ics16._util import as_fraction, derive_seed
from ics16.analysis import scaling_eval, summary_csv
from ics16.errors import BudgetExceeded, ConstructionFailed, IcsError
from ics16.graph import GraphParams


def _default_seed() -> int:
    return int(os.environ.get("ICS_SEED", "0"))


def _emit(text: str, path: str | None) -> None:
    if path and path != "-":
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def parse_range(spec: str) -> list[Fraction]:
    """``start:stop:step`` with both ends included, or a comma-separated list."""
    if ":" not in spec:
        return [as_fraction(v) for v in spec.split(",") if v]
    start, stop, step = (as_fraction(v) for v in spec.split(":"))
    if step <= 0:
        raise argparse.ArgumentTypeError("step must be positive")
    out, v = [], start
    while v <= stop:
        out.append(v)
        v += step
    return out


# --- gen-ecc ----------------------------------------------------------------------


def cmd_gen_ecc(args) -> int:
    from ics16.ecc import build_ecc, verify_distances

    try:
        code = build_ecc(args.alphabet, args.epsilon, args.seed, M=args.M)
    except ConstructionFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = verify_distances(code)
    out = {**code.descriptor(), "distances": report.to_dict(), "verified": report.passed}
    _emit(_dump(out), args.out)
    return 0 if report.passed else 1


# --- check-code -------------------------------------------------------------------


def cmd_check_code(args) -> int:
    from ics16.layered_code import LayeredCode, check_sensitivity_exhaustive, sample_decode_quality

    eps = as_fraction(args.epsilon)
    code = LayeredCode(args.seed, args.alphabet, GraphParams(args.n0, args.depth))
    if args.mode == "exhaustive":
        try:
            report = check_sensitivity_exhaustive(code, args.depth, eps, budget=args.budget)
        except BudgetExceeded as exc:
            print(f"error: BudgetExceeded: {exc}", file=sys.stderr)
            return 1
        _emit(_dump({"code": code.descriptor(eps), "report": report.to_dict()}), args.out)
        return 0
    samples = sample_decode_quality(code, eps, args.trials, derive_seed(args.seed, "samples"))
    bound = 2 * eps * args.depth
    hist: dict[int, int] = {}
    for _, bad in samples:
        hist[bad] = hist.get(bad, 0) + 1
    within = sum(bad <= bound for _, bad in samples)
    out = {
        "code": code.descriptor(eps),
        "trials": args.trials,
        "bad_bound": str(bound),
        "within_bound": within,
        "within_fraction": str(Fraction(within, args.trials)),
        "bad_histogram": {str(k): v for k, v in sorted(hist.items())},
    }
    _emit(_dump(out), args.out)
    return 0


# --- simulate / sweep / replay ----------------------------------------------------


def _session_config(args, alpha=None):
    from ics16.channel import SessionConfig

    return SessionConfig(
        n0=args.n0,
        epsilon=str(as_fraction(args.epsilon)),
        K=args.K,
        alphabet_size=args.alphabet,
        ecc_epsilon=str(as_fraction(args.ecc_epsilon)),
        ecc_seed=args.ecc_seed,
        ecc_M=args.ecc_M,
        protocol=args.protocol,
        alpha=str(as_fraction(args.alpha if alpha is None else alpha)),
    )


def _adversary(args) -> dict:
    d: dict = {"kind": args.adversary}
    if args.adversary == "random":
        d["rate"] = str(as_fraction(args.adv_rate))
    elif args.adversary == "burst":
        d["start"], d["length"] = args.burst_start, args.burst_length
    elif args.adversary in ("nearest", "jammer"):
        d["per_message"] = None if args.per_message is None else str(as_fraction(args.per_message))
    return d


def _write_records(path: str | None, records) -> None:
    if path:
        with open(path, "w") as fh:
            for r in records:
                fh.write(r.to_json() + "\n")


def cmd_simulate(args) -> int:
    if args.replay:
        return _replay(args.replay, args.out)
    from ics16.channel import monte_carlo

    cfg = _session_config(args)
    st = monte_carlo(cfg, _adversary(args), args.runs, args.seed, jobs=args.jobs, keep_records=True)
    _write_records(args.records, st.records)
    _emit(summary_csv([st.row()]), args.out)
    if args.rho is not None:
        verdict = scaling_eval(st.records, args.rho, args.eps_prime)
        print(_dump(verdict.to_dict()), file=sys.stderr, end="")
    return 0


def cmd_sweep(args) -> int:
    from ics16.channel import monte_carlo

    rows, records = [], []
    for alpha in parse_range(args.alpha):
        cfg = _session_config(args, alpha)
        st = monte_carlo(cfg, _adversary(args), args.runs, args.seed, jobs=args.jobs, keep_records=bool(args.records))
        rows.append(st.row())
        records.extend(st.records)
    _write_records(args.records, records)
    _emit(summary_csv(rows), args.out)
    return 0


def _replay(path: str, out: str | None) -> int:
    from ics16.channel import RunRecord, replay

    lines, same = [], True
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = RunRecord.from_json(line)
            again = replay(rec).to_json()
            same &= again == rec.to_json()
            lines.append(again + "\n")
    _emit("".join(lines), out)
    if not same:
        print("error: replay diverged from the recorded run", file=sys.stderr)
        return 1
    return 0


def cmd_replay(args) -> int:
    return _replay(args.records, args.out)


# --- boost ------------------------------------------------------------------------


def cmd_boost(args) -> int:
    from ics16.boosting import BoostParams, MockInnerScheme, RealInnerScheme, boost
    from ics16.channel import SessionConfig
    from ics16.protocol import ExchangeProtocol, RandomTreeProtocol

    if args.protocol == "exchange":
        outer = ExchangeProtocol(args.n0)
    else:
        outer = RandomTreeProtocol(args.n0, derive_seed(args.seed, "protocol") & 0xFFFFFFFF)
    params = BoostParams.for_protocol(args.n0, args.epsilon, args.chunk, args.beta, args.intersection_rounds)
    if args.inner == "mock":
        inner = MockInnerScheme(default_confidence=args.mock_confidence)
    else:
        ecc = SessionConfig(alphabet_size=args.alphabet, ecc_epsilon=str(as_fraction(args.ecc_epsilon)),
                            ecc_seed=args.ecc_seed).ecc()
        inner = RealInnerScheme(
            ecc,
            epsilon=as_fraction(args.epsilon),
            alpha=as_fraction(args.alpha),
            adversary=_adversary(args),
            code_seed=derive_seed(args.seed, "code"),
        )
    res = boost(outer, args.x, args.y, inner, params, args.seed)
    out = {**res.to_dict(), "protocol": outer.descriptor(), "inner": args.inner, "success": res.success()}
    _emit(_dump(out), args.out)
    return 0


# --- parser -----------------------------------------------------------------------


def _session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n0", type=int, default=4)
    p.add_argument("--epsilon", default="1/4", help="code epsilon; sets K = n0/epsilon")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--alphabet", type=int, default=256)
    p.add_argument("--ecc-epsilon", default="1/20")
    p.add_argument("--ecc-seed", type=int, default=0)
    p.add_argument("--ecc-M", type=int, default=None)
    p.add_argument("--protocol", choices=["random", "exchange"], default="random")
    _adversary_flags(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--records", default=None, help="write JSONL run records here")


def _adversary_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--adversary", choices=["none", "random", "burst", "nearest", "jammer"], default="none")
    p.add_argument("--alpha", default="0", help="budget as a fraction of K*M bits")
    p.add_argument("--adv-rate", default="1/50")
    p.add_argument("--burst-start", type=int, default=1)
    p.add_argument("--burst-length", type=int, default=1)
    p.add_argument("--per-message", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ics16", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON file of flag values")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.set_defaults(func=fn)
        return p

    p = add("gen-ecc", cmd_gen_ecc, "build and verify the binary code")
    p.add_argument("--alphabet", type=int, required=True)
    p.add_argument("--epsilon", required=True)
    p.add_argument("--M", type=int, default=None)

    p = add("check-code", cmd_check_code, "sensitivity check or decode-quality sampling")
    p.add_argument("--mode", choices=["exhaustive", "sample"], default="exhaustive")
    p.add_argument("--alphabet", type=int, default=64)
    p.add_argument("--epsilon", default="2/5")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--n0", type=int, default=4)
    p.add_argument("--budget", type=int, default=2_000_000)
    p.add_argument("--trials", type=int, default=500)

    p = add("simulate", cmd_simulate, "Monte Carlo sessions, CSV summary")
    _session_flags(p)
    p.add_argument("--replay", default=None, help="re-run the records in this JSONL file")
    p.add_argument("--rho", default=None)
    p.add_argument("--eps-prime", default="1/10")

    p = add("sweep", cmd_sweep, "one CSV row per alpha")
    _session_flags(p)
    p.set_defaults(alpha="0:0.14:0.02")

    p = add("replay", cmd_replay, "re-run JSONL records and check they match")
    p.add_argument("--records", required=True)

    p = add("boost", cmd_boost, "boosted run over a long protocol")
    p.add_argument("--n0", type=int, default=8)
    p.add_argument("--protocol", choices=["random", "exchange"], default="random")
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=0)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--beta", type=int, default=None)
    p.add_argument("--intersection-rounds", type=int, default=None)
    p.add_argument("--epsilon", default="1/4")
    p.add_argument("--inner", choices=["mock", "real"], default="mock")
    p.add_argument("--mock-confidence", default="1")
    p.add_argument("--alphabet", type=int, default=256)
    p.add_argument("--ecc-epsilon", default="1/20")
    p.add_argument("--ecc-seed", type=int, default=0)
    _adversary_flags(p)
    return parser


def _with_config(argv: list[str]) -> list[str]:
    """Splice ``--config`` values in right after the subcommand.

    Flags given on the command line come later and so override the file.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    ns, _ = pre.parse_known_args(argv[1:])
    if not ns.config:
        return argv
    with open(ns.config) as fh:
        conf = json.load(fh)
    tokens = []
    for key, value in conf.items():
        if value is not None:
            tokens += [f"--{key.replace('_', '-')}", str(value)]
    return argv[:1] + tokens + argv[1:]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_with_config(argv))
    if args.seed is None:
        args.seed = _default_seed()
    try:
        return args.func(args)
    except IcsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
