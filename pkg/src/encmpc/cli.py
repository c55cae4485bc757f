"""``encmpc`` command line.

Exit codes: 0 success, 2 when a checked invariant fails (error bound below a
measured error, key-size rule, box violation, overflow detected), 1 for any
other error (bad config, missing file, channel failure).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import harness
from .fixedpoint import OverflowBandError
from .mpc import ControllerError
from .protocols import KeySizeError

log = logging.getLogger("encmpc")

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT = 0, 1, 2

# Columns omitted when comparing runs for determinism.
TIMING_COLUMNS = ("wall_s", "median_s", "min_s", "per_iter_s")


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    header = list(rows[0])
    for r in rows[1:]:
        header += [k for k in r if k not in header]
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def build_config(args) -> harness.ExperimentConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    for name in ("seed", "out", "variant", "keybits"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    if args.allow_test_keys:
        data["allow_test_keys"] = True
    if args.cmd == "benchmark" and "variant" not in data:
        data["variant"] = "both"
    if args.cmd == "plan" and args.delta is not None:
        data["delta"] = args.delta
    return harness.ExperimentConfig.from_json(data)


def run(args) -> int:
    cfg = build_config(args)
    if args.cmd == "demo":
        _emit(rows_to_csv(harness.cmd_demo(cfg)), cfg.out)
    elif args.cmd == "error-experiment":
        _emit(rows_to_csv(harness.cmd_error_experiment(cfg)), cfg.out)
    elif args.cmd == "benchmark":
        rows = harness.cmd_benchmark(cfg)
        _emit(rows_to_csv(rows), cfg.out)
        failed = False
        for chk in harness.scaling_checks(rows):
            status = "ok" if chk["ok"] else "FAILED"
            print(f"# {chk['check']} {chk['variant']} n={chk['n']} m={chk['m']} l_f={chk['l_f']}: "
                  f"{chk['value']:.3f} {status}", file=sys.stderr)
            failed |= not chk["ok"]
        if failed:
            raise harness.InvariantViolation("timing scaling check failed")
    elif args.cmd == "plan":
        plan = harness.cmd_plan(cfg, validate=not args.no_validate)
        _emit(json.dumps(plan, indent=2, sort_keys=True) + "\n", cfg.out)
        print(harness.plan_summary(plan), file=sys.stderr)
        if not plan["ok"]:
            return EXIT_ERROR
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="encmpc", description="Encrypted MPC experiments")
    sub = p.add_subparsers(dest="cmd", required=True)
    for name, help_ in [("demo", "closed-loop run over the encrypted protocol"),
                        ("error-experiment", "predicted vs measured fixed-point error per iteration"),
                        ("benchmark", "protocol wall times"),
                        ("plan", "choose l_i, l_f and key size for an error budget")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output file (stdout if omitted)")
        s.add_argument("--variant", choices=["cs", "ss", "both"] if name != "plan" else ["cs", "ss"])
        s.add_argument("--keybits", type=int)
        s.add_argument("--allow-test-keys", action="store_true",
                       help="permit moduli below 512 bits")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "plan":
            s.add_argument("--delta", type=float, help="error budget relative to the input box")
            s.add_argument("--no-validate", action="store_true",
                           help="skip the seeded protocol run")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (harness.InvariantViolation, KeySizeError, OverflowBandError) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except ControllerError as e:
        print(f"error: {e}", file=sys.stderr)
        cause = e.__cause__ or getattr(e, "cause", None)
        if isinstance(cause, (harness.InvariantViolation, KeySizeError, OverflowBandError)):
            return EXIT_INVARIANT
        return EXIT_ERROR
    except Exception as e:  # noqa: BLE001 - every other failure is operational
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
