"""Command-line interface.

Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 I/O error.
Set ``PDSPLIT_LOG`` (``DEBUG``, ``INFO``, ``WARNING``, ...) for logging.
"""

import argparse
import json
import logging
import os
import sys

from . import harness, instances
from .errors import PdsplitError
from .model import MetricClassConfig, build_metric
from .harness import default_metric_config

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _param(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key.replace("-", "_"), value


def build_parser():
    p = argparse.ArgumentParser(prog="pdsplit", description="Primal-dual splitting solver and rate-bound checker.")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="write a seeded problem instance as JSON")
    g.add_argument("generator", choices=sorted(instances.GENERATORS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter (repeatable)")
    g.add_argument("--out", required=True, help="output file or directory")

    s = sub.add_parser("solve", help="run a splitting method and check the rate bounds")
    _common(s)
    s.add_argument("--algo", choices=["ppa", "fbs", "prs", "fbf"], default="ppa")
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--stop-fpr", type=float, default=1e-10)
    s.add_argument("--lam", type=float, default=1.0, help="relaxation parameter")
    s.add_argument("--prs-weight", type=float, default=0.0, help="skew weight of PRS")
    s.add_argument("--metric-schedule", choices=["constant", "decreasing", "increasing"], default="constant")
    s.add_argument("--oracle", choices=["closed-form", "reference"], default="closed-form")
    s.add_argument("--check-bounds", action="store_true", help="exit 1 when any bound check fails")
    s.add_argument("--probes", type=int, default=0, help="extra random probes for the fundamental inequality")
    s.add_argument("--out", required=True, help="artifact directory")

    c = sub.add_parser("compare-cp", help="compare PPA with a plain primal-dual loop")
    c.add_argument("--instance", required=True)
    c.add_argument("--tau", type=float)
    c.add_argument("--sigma", type=float)
    c.add_argument("--budget", type=int, default=500)
    c.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="summarize run artifacts")
    r.add_argument("--out", required=True, help="artifact directory")

    v = sub.add_parser("validate-metrics", help="build a structured metric and print its certificates")
    _common(v)
    v.add_argument("--algo", choices=["ppa", "fbs", "prs", "fbf"], default="ppa")
    v.add_argument("--scale", type=float, default=1.0, help="multiply every metric block")
    return p


def _common(p):
    p.add_argument("--instance", required=True)
    p.add_argument("--level", type=int, choices=[1, 2])
    p.add_argument("--metric-class", type=int, choices=[1, 2])
    p.add_argument("--w", type=float)
    p.add_argument("--seed", type=int, default=0)


def cmd_generate(args):
    inst = instances.generate(args.generator, args.seed, **dict(args.param))
    path = args.out
    if os.path.isdir(path) or path.endswith(os.sep):
        os.makedirs(path, exist_ok=True)
        path = os.path.join(path, f"{args.generator}-seed{args.seed}.json")
    instances.save(inst, path)
    print(path)
    return EXIT_OK


def cmd_solve(args):
    inst = instances.load(args.instance)
    spec = harness.RunSpec(inst, algorithm=args.algo, level=args.level, metric_class=args.metric_class, w=args.w,
                           prs_weight=args.prs_weight, lam=args.lam, budget=args.budget, stop_fpr=args.stop_fpr,
                           seed=args.seed, oracle=args.oracle, metric_schedule=args.metric_schedule,
                           check_bounds=True, n_probes=args.probes, out_dir=args.out)
    harness.solve(spec)
    text, passed = harness.report(args.out)
    print(text)
    if args.check_bounds and not passed:
        return EXIT_CHECK
    return EXIT_OK


def cmd_compare_cp(args):
    inst = instances.load(args.instance)
    dev = harness.compare_chambolle_pock(inst, args.tau, args.sigma, args.budget, args.seed)
    ok = dev <= harness.CP_TOLERANCE
    print(json.dumps({"max_deviation": dev, "tolerance": harness.CP_TOLERANCE, "passed": ok}))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_report(args):
    text, passed = harness.report(args.out)
    print(text)
    return EXIT_OK if passed else EXIT_CHECK


def cmd_validate_metrics(args):
    inst = instances.load(args.instance)
    mp, split, _ = harness.split_for(inst.model, args.algo, args.level)
    cfg = default_metric_config(mp, args.algo, split.level, args.metric_class, args.w)
    cfg = MetricClassConfig(cfg.metric_class, cfg.w, args.scale * cfg.V0, [args.scale * v for v in cfg.V],
                            None if cfg.W is None else [args.scale * v for v in cfg.W], cfg.level)
    U = build_metric(cfg, mp.B)
    out = {
        "level": split.level,
        "level_reason": split.reason,
        "metric_class": cfg.metric_class,
        "w": cfg.w,
        "certificates": cfg.certificates,
        "dense_min_eigenvalue": U.min_eig,
        "opnorm": U.opnorm,
        "certificate_holds": bool(U.min_eig >= cfg.certificates["rho_bound"] - 1e-10),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK if out["certificate_holds"] else EXIT_CHECK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "compare-cp": cmd_compare_cp,
    "report": cmd_report,
    "validate-metrics": cmd_validate_metrics,
}


def main(argv=None):
    level = os.environ.get("PDSPLIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except PdsplitError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, KeyError) as exc:
        # malformed files surface as ValueError or KeyError while loading
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
