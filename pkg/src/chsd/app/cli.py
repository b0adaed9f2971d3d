"""Command-line entry point: ``chsd run|converge|presets|calibrate-beta``."""

from __future__ import annotations

import os

# cap BLAS/OpenMP threads before numpy is imported
_threads = os.environ.get("CHSD_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import logging
import sys
from typing import List, Optional

from .config import PRESETS, ConfigError, RunConfig, load_config, preset
from .drivers import RunError, calibrate_beta, run_case, run_convergence


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("config", nargs="?", help="config file or preset name")
    p.add_argument("--config", dest="config_opt", help="config file or preset name")
    p.add_argument("--scheme", choices=("pd", "fd"))
    p.add_argument("--tau", type=float)
    p.add_argument("--tfinal", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)


def _resolve(args) -> RunConfig:
    src = args.config_opt or args.config
    if src is None:
        raise ConfigError("no config given (pass a file or a preset name)")
    cfg = load_config(src)
    changes = {k: v for k, v in (("scheme", args.scheme), ("tau", args.tau), ("t_final", args.tfinal),
                                 ("n", args.n), ("seed", args.seed)) if v is not None}
    return cfg.with_(**changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chsd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one simulation"))
    conv = sub.add_parser("converge", help="temporal convergence study")
    _add_common(conv)
    conv.add_argument("--taus", type=float, nargs="+", default=[0.04, 0.02, 0.01])
    conv.add_argument("--tau-ref", type=float, default=0.00125)
    sub.add_parser("presets", help="list built-in configurations")
    cal = sub.add_parser("calibrate-beta", help="smallest stable pressure stabilization")
    _add_common(cal)
    cal.add_argument("--steps", type=int, default=10)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            for name in PRESETS:
                c = preset(name)
                print(f"{name:<12} scheme={c.scheme} n={c.n} tau={c.tau:g} t_final={c.t_final:g}")
            return 0
        cfg = _resolve(args)
        if args.command == "run":
            res = run_case(cfg, args.out_dir)
            last = res.reports[-1]
            print(f"{cfg.name}: {cfg.steps} steps, energy {res.reports[0].total:.6e} -> {last.total:.6e}, "
                  f"mass drift {res.mass_drift:.3e}, phi in [{res.phi_range[0]:.4f}, {res.phi_range[1]:.4f}]")
            for f in res.files[-2:]:
                print(f"wrote {f}")
        elif args.command == "converge":
            print(run_convergence(cfg, args.taus, args.tau_ref).format())
        elif args.command == "calibrate-beta":
            print(calibrate_beta(cfg, steps=args.steps).format())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
