"""pulsefocus command line.

Exit codes: 0 all verdicts pass, 1 scientific failure, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pulsefocus.closedform import predicted_blowup_time
from pulsefocus.errors import ConfigError, InvalidParameterError, PulseFocusError, RegimeError
from pulsefocus.harness.config import load_config
from pulsefocus.harness.report import emit_report
from pulsefocus.harness.runner import build_data, run_experiment
from pulsefocus.regimes import ProblemParams, classify, gamma_exponent, subcritical_rate

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("pulsefocus")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pulsefocus", description="Focusing nonlinear spherical pulses: experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config and write a report directory")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: [output] path of the config)")
    r.add_argument("--workers", type=int, help="concurrent sweep members")
    r.add_argument("--resolution", type=int, help="cells per pulse width, overrides the config")

    c = sub.add_parser("classify", help="regime of (p, alpha)")
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--alpha", type=float, required=True)

    b = sub.add_parser("predict-blowup", help="closed-form blow-up time for each eps of a config")
    b.add_argument("config")
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(resolution=args.resolution, workers=args.workers, output=args.out)
    out = Path(cfg.output)
    report = run_experiment(cfg)
    emit_report(report, out)
    for v in report.data["verdicts"]:
        print(f"{'PASS' if v['pass'] else 'FAIL'}\t{v['rule']}")
    print(f"report\t{out / 'report.json'}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def _cmd_classify(args) -> int:
    params = ProblemParams(p=args.p, alpha=args.alpha)
    rc = classify(params)
    print(f"caustic\t{rc.caustic.value}")
    print(f"propagation\t{rc.propagation.value}")
    print(f"gamma\t{gamma_exponent(params)!r}")
    try:
        rate = subcritical_rate(params)
        print(f"rate\t{rate.order!r}" + ("\tlog_factor" if rate.log_factor else ""))
    except RegimeError:
        print("rate\tnone")
    if rc.note:
        print(f"note\t{rc.note}")
    return EXIT_PASS


def _cmd_predict(args) -> int:
    cfg = load_config(args.config)
    if cfg.params.a >= 0:
        raise ConfigError("predict-blowup needs an accretive coupling a < 0")
    data = build_data(cfg)
    print("eps\tt_blowup\treason\tray")
    for eps in cfg.eps_list:
        v = predicted_blowup_time(data, cfg.member_params(eps))
        ray = "" if v.ray is None else repr(v.ray)
        print(f"{eps!r}\t{v.t_max!r}\t{v.reason.value}\t{ray}")
    return EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_run, "classify": _cmd_classify, "predict-blowup": _cmd_predict}
    try:
        return handlers[args.command](args)
    except (ConfigError, InvalidParameterError, RegimeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PulseFocusError, OSError, ArithmeticError, ValueError) as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
