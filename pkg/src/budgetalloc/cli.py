"""Command-line front end: generate, run, measure ratios, solve OPT, drive adversaries, verify."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import adversary, duals
from .algorithms import (
    RHO,
    STRATEGIES,
    AuditFailure,
    FeasibilityLemmaViolated,
    IncompatibleStrategy,
    make_session,
    run_online,
)
from .core import (
    GENERAL,
    LAMINAR,
    constraint_multiplicity,
    format_money,
    instance_stats,
    instance_to_dict,
    loads_instance,
    validate,
)
from .generators import RandomInstanceSpec, generate
from .opt import OracleLimitExceeded, NotGeneratedTranscript, opt_analytic, opt_brute, opt_lp

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_AUDIT = 3
EXIT_ORACLE = 4


class UsageError(Exception):
    pass


def _emit(args, payload: dict | str, *, path: str | None = None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=1) + "\n"
    path = path if path is not None else args.out
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _stamp(args, payload: dict) -> dict:
    if not args.reproducible:
        payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return payload


def _load(path: str):
    with open(path) as fh:
        text = fh.read()
    data = json.loads(text)
    return loads_instance(text), data


def _num(x):
    """JSON-friendly number: exact rationals become strings."""
    if x is None or isinstance(x, (int, float, str, bool)):
        return x
    return format_money(x)


def _ratio(opt, alg) -> float:
    if alg == 0:
        return math.inf if opt > 0 else 1.0
    return float(opt) / float(alg)


def _json_float(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def theorem_bound(strategy: str, instance) -> float | None:
    if strategy == "adlaminar":
        return RHO
    if strategy == "greedy-laminar":
        return 2.0
    if strategy == "adgeneral":
        return duals.adgeneral_bound_factor(max(constraint_multiplicity(instance), 1))
    return None


# --------------------------------------------------------------------------
# gen


def _random_spec(args, mode: str) -> RandomInstanceSpec:
    return RandomInstanceSpec(
        mode=mode,
        bidders=args.bidders,
        dims=args.dims,
        depth=args.depth,
        branching=args.branching,
        p=args.p,
        impressions=args.impressions,
        bid_ratio=Fraction(args.bid_ratio) if args.bid_ratio else None,
        bid_scale=Fraction(args.bid_scale),
        seed=args.seed,
    )


def cmd_gen(args) -> int:
    kind = args.kind
    if kind in ("random-laminar", "random-general"):
        inst = generate(_random_spec(args, LAMINAR if kind == "random-laminar" else GENERAL))
        _emit(args, instance_to_dict(inst))
    elif kind == "lb-admission":
        _emit(args, instance_to_dict(adversary.admission_skeleton(args.n)))
    elif kind == "lb-aon":
        layout = adversary.aon_layout(args.p, Fraction(args.eps))
        _emit(args, instance_to_dict(adversary.aon_skeleton(layout)))
    elif kind == "intro-example":
        a, b = adversary.intro_scenarios(Fraction(args.delta) if args.delta else None)
        if args.out:
            stem = args.out[:-5] if args.out.endswith(".json") else args.out
            _emit(args, instance_to_dict(a), path=f"{stem}-A.json")
            _emit(args, instance_to_dict(b), path=f"{stem}-B.json")
        else:
            _emit(args, {"A": instance_to_dict(a), "B": instance_to_dict(b)})
    else:
        raise UsageError(f"unknown kind {kind}")
    return EXIT_OK


# --------------------------------------------------------------------------
# run


def _trace_rows(report) -> list[list]:
    session = report.session
    rows = []
    running = getattr(session, "_running_dual", None)
    for i, d in enumerate(report.decisions):
        total = d.total
        rows.append([
            d.impression_id,
            "" if d.bidder is None else session.instance.bidders[d.bidder].id,
            f"{float(total):.12g}",
            format_money(total),
            f"{float(d.sigma):.12g}",
            "" if running is None else f"{running[i]:.12g}",
        ])
    return rows


def _running_dual_hook(session, decision) -> None:
    if not hasattr(session, "labels"):
        return
    dual = duals.dual_prime_from_session(session)
    obj = duals.dual_prime_objective(dual, session.instance, session.forests)
    session.__dict__.setdefault("_running_dual", []).append(obj)


def cmd_run(args) -> int:
    inst, _ = _load(args.instance)
    problems = validate(inst)
    if problems:
        _emit(args, _stamp(args, {"valid": False, "problems": problems}))
        return EXIT_VALIDATION
    kw = {}
    if args.sigma_rule:
        kw["sigma_rule"] = args.sigma_rule
    hooks = [_running_dual_hook] if args.trace and args.algo == "adlaminar" else []
    try:
        report = run_online(inst, args.algo, audit=args.audit, hooks=hooks, **kw)
    except IncompatibleStrategy as exc:
        _emit(args, _stamp(args, {"valid": False, "problems": [str(exc)]}))
        return EXIT_VALIDATION
    except FeasibilityLemmaViolated as exc:
        _emit(args, _stamp(args, {"audit_failure": str(exc)}))
        return EXIT_AUDIT
    stats = instance_stats(inst)
    if args.algo in ("adgeneral", "adlaminar") and not stats.small_bids_ok:
        report.warnings.append(
            f"bid-to-budget ratio {float(stats.eps):.4g} exceeds the small-bids threshold for p={stats.p}"
        )
    payload = report.to_json()
    payload["kappa"] = {f"{b}/{c}": format_money(v) for (b, c), v in report.kappas.items()}
    _emit(args, _stamp(args, payload))
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["impression", "bidder", "earned", "earned_exact", "sigma", "dual_objective"])
            w.writerows(_trace_rows(report))
    failed = args.audit != "off" and report.feasibility is not None and not (
        report.feasibility["pass"] and report.feasibility.get("ratio_pass", True)
    )
    return EXIT_AUDIT if failed else EXIT_OK


# --------------------------------------------------------------------------
# ratio


def _opt_value(inst, method: str, semantics: str = "partial"):
    if method == "lp":
        return opt_lp(inst)
    if method == "brute":
        return opt_brute(inst, semantics)
    raise UsageError(f"method {method} needs a transcript")


def _one_trial(job) -> dict:
    spec, algo, method, audit = job
    inst = generate(spec)
    rep = run_online(inst, algo, audit=audit)
    opt = _opt_value(inst, method)
    return {
        "seed": spec.seed,
        "alg": format_money(rep.primal),
        "opt": _num(opt),
        "ratio": _json_float(_ratio(opt, rep.primal)),
        "certificate_pass": None if rep.feasibility is None else rep.feasibility["pass"],
    }


def cmd_ratio(args) -> int:
    if args.instance:
        inst, _ = _load(args.instance)
        rep = run_online(inst, args.algo, audit=args.audit)
        opt = _opt_value(inst, args.opt_method, args.semantics)
        payload = {
            "algo": args.algo,
            "alg": format_money(rep.primal),
            "opt": _num(opt),
            "ratio": _json_float(_ratio(opt, rep.primal)),
            "theorem_bound": theorem_bound(args.algo, inst),
        }
        _emit(args, _stamp(args, payload))
        return EXIT_OK
    mode = LAMINAR if args.kind == "random-laminar" else GENERAL
    base = _random_spec(args, mode)
    jobs = [
        (RandomInstanceSpec(**{**base.__dict__, "seed": args.seed + t}), args.algo, args.opt_method, args.audit)
        for t in range(args.trials)
    ]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_one_trial, jobs))
    else:
        results = [_one_trial(j) for j in jobs]
    ratios = [math.inf if r["ratio"] == "inf" else r["ratio"] for r in results]
    payload = {
        "algo": args.algo,
        "trials": results,
        "max_ratio": _json_float(max(ratios)) if ratios else None,
        "mean_ratio": _json_float(sum(ratios) / len(ratios)) if ratios else None,
        "theorem_bound": theorem_bound(args.algo, generate(jobs[0][0])) if jobs else None,
    }
    _emit(args, _stamp(args, payload))
    return EXIT_OK


# --------------------------------------------------------------------------
# opt


def cmd_opt(args) -> int:
    inst, data = _load(args.instance)
    if args.method == "analytic":
        value = opt_analytic(data)
    else:
        value = _opt_value(inst, args.method, args.semantics)
    sys.stdout.write(f"{_num(value)}\n")
    if args.out:
        _emit(args, _stamp(args, {"method": args.method, "semantics": args.semantics,
                                  "value": _num(value), "value_float": float(value)}))
    return EXIT_OK


# --------------------------------------------------------------------------
# adversary


def cmd_adversary(args) -> int:
    if args.algo in ("adlaminar", "greedy-laminar"):
        raise IncompatibleStrategy(f"{args.algo} needs laminar budgets; lower-bound instances are general")

    def factory(inst, eps):
        return make_session(inst, args.algo, eps=eps)

    if args.kind == "admission":
        tr = adversary.run_admission_lb(args.n, factory, Fraction(args.delta) if args.delta else None,
                                        fractional=args.fractional)
        extra = {"x": [format_money(x) for x in tr.details["x"]], "stop_phase": tr.details["stop_phase"],
                 "capacity_load": format_money(tr.details["load"])}
    else:
        tr = adversary.run_aon_lb(args.p, Fraction(args.eps), Fraction(args.delta or "1/1000"), factory)
        extra = {
            "cells": [list(c) for c in tr.details["cells"]],
            "segment_bound": format_money(tr.details["segment_bound"]),
            "segment_violations": [[list(c), format_money(r)] for c, r in tr.details["violations"]],
        }
    if args.out:
        doc = instance_to_dict(tr.instance)
        doc["transcript"] = tr.metadata()
        _emit(args, doc)
    payload = {
        "kind": tr.kind,
        "algo": args.algo,
        "alg": format_money(tr.alg_revenue),
        "opt_analytic": format_money(tr.opt_analytic),
        "ratio": _json_float(tr.ratio),
        "impressions": len(tr.instance.impressions),
        **extra,
    }
    sys.stdout.write(json.dumps(_stamp(args, payload), indent=1) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    inst, _ = _load(args.instance)
    problems = validate(inst)
    stats = instance_stats(inst)
    payload = {
        "valid": not problems,
        "problems": problems,
        "mode": inst.mode,
        "bidders": len(inst.bidders),
        "impressions": len(inst.impressions),
        "p": stats.p,
        "eps": format_money(stats.eps),
        "small_bids_ok": stats.small_bids_ok,
    }
    _emit(args, _stamp(args, payload))
    return EXIT_OK if not problems else EXIT_VALIDATION


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # accepted before or after the subcommand; the copy after it must not reset defaults
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(0))
        g.add_argument("--reproducible", action="store_true", default=d(False),
                       help="omit the timestamp field")
        g.add_argument("--audit", choices=("off", "end", "paranoid"), default=d("end"))
        g.add_argument("--out", default=d(None), help="output file (default: stdout)")
        return g

    common = global_flags(True)

    gen_opts = argparse.ArgumentParser(add_help=False)
    gen_opts.add_argument("--bidders", type=int, default=3)
    gen_opts.add_argument("--dims", type=int, default=None)
    gen_opts.add_argument("--depth", type=int, default=3)
    gen_opts.add_argument("--branching", type=int, default=4)
    gen_opts.add_argument("--p", type=int, default=2)
    gen_opts.add_argument("--impressions", type=int, default=100)
    gen_opts.add_argument("--bid-ratio", default=None, help="cap on bid/budget, e.g. 1/100")
    gen_opts.add_argument("--bid-scale", default="1/2", help="fraction of the small-bids threshold")

    parser = argparse.ArgumentParser(prog="budgetalloc", description=__doc__, parents=[global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common, gen_opts], help="write an instance file")
    g.add_argument("--kind", required=True,
                   choices=("random-laminar", "random-general", "lb-admission", "lb-aon", "intro-example"))
    g.add_argument("--n", type=int, default=16)
    g.add_argument("--eps", default="1/2")
    g.add_argument("--delta", default=None)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", parents=[common], help="run one strategy on an instance")
    r.add_argument("--instance", required=True)
    r.add_argument("--algo", required=True, choices=STRATEGIES)
    r.add_argument("--trace", default=None, help="per-impression CSV trace")
    r.add_argument("--sigma-rule", choices=("posterior", "integrated", "arrival"), default=None)
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("ratio", parents=[common, gen_opts], help="measure OPT/ALG")
    q.add_argument("--algo", required=True, choices=STRATEGIES)
    q.add_argument("--instance", default=None)
    q.add_argument("--kind", choices=("random-laminar", "random-general"), default="random-laminar")
    q.add_argument("--trials", type=int, default=1)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--opt-method", choices=("lp", "brute"), default="lp")
    q.add_argument("--semantics", choices=("partial", "aon"), default="partial")
    q.set_defaults(func=cmd_ratio)

    o = sub.add_parser("opt", parents=[common], help="offline optimum")
    o.add_argument("--instance", required=True)
    o.add_argument("--method", choices=("lp", "brute", "analytic"), default="lp")
    o.add_argument("--semantics", choices=("partial", "aon"), default="partial")
    o.set_defaults(func=cmd_opt)

    a = sub.add_parser("adversary", parents=[common], help="play an adaptive lower bound")
    a.add_argument("--kind", choices=("admission", "aon"), required=True)
    a.add_argument("--algo", required=True, choices=STRATEGIES)
    a.add_argument("--n", type=int, default=64)
    a.add_argument("--p", type=int, default=4)
    a.add_argument("--eps", default="1/2")
    a.add_argument("--delta", default=None)
    a.add_argument("--fractional", action="store_true", help="unit-demand requests (one per group)")
    a.set_defaults(func=cmd_adversary)

    v = sub.add_parser("verify", parents=[common], help="validate an instance and print statistics")
    v.add_argument("--instance", required=True)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, json.JSONDecodeError, UsageError) as exc:
        if isinstance(exc, OracleLimitExceeded):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ORACLE
        if isinstance(exc, NotGeneratedTranscript):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AuditFailure as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except FeasibilityLemmaViolated as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT


if __name__ == "__main__":
    sys.exit(main())
