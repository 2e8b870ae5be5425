"""``otfwi <command> --config FILE [--seed N] [--out DIR]``.

Exit status: 0 on success, 1 when the configuration or an input file is
invalid, 2 when a simulation fails numerically or a check does not pass.
"""

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .config import COMMANDS, ConfigError, parse_config
from .storage import FormatError, atomic_write
from .wave import NumericalError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="otfwi", description="Transport-based waveform inversion at desk scale.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="INI file (see configs/)")
    p.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    p.add_argument("--out", type=Path, default=None, help="overrides [run] out")
    return p


def _forward(cfg, out, seed):
    gathers = ex.run_forward(cfg, out)
    print(f"wrote {len(gathers)} gather(s) to {out}")
    return EXIT_OK


def _landscape(cfg, out, seed):
    v0s, alphas, surfaces = ex.run_landscape(cfg, out)
    for name, surf in surfaces.items():
        i, j = divmod(int(surf.argmin()), surf.shape[1])
        print(f"{name:>14}: row minima {ex.row_minima(surf):3d}, "
              f"argmin v0={v0s[i]:g} alpha={alphas[j]:g}")
    return EXIT_OK


def _geodesic(cfg, out, seed):
    t, curves = ex.run_geodesic(cfg, out)
    alphas = cfg["geodesic"]["alphas"]
    for name, c in curves.items():
        peaks = ", ".join(f"{a:g}:{t[c[k].argmax()]:.3f}" for k, a in enumerate(alphas))
        print(f"{name:>12} peak times  {peaks}")
    return EXIT_OK


def _freqscan(cfg, out, seed):
    w2, l2, spread = ex.run_freqscan(cfg, out)
    print("k  transport      l2")
    for k in range(w2.size):
        print(f"{k}  {w2[k]:.6e}  {l2[k]:.6e}")
    print(f"transport strictly decreasing over k >= 1; L2 spread {100 * spread:.2f}%")
    return EXIT_OK


def _gradcheck(cfg, out, seed):
    report = ex.run_gradcheck(cfg, out, seed=seed)
    for name, err, tol, status in report:
        print(f"{status}  {name:<16} error {err:.3e}  (tolerance {tol:.0e})")
    return EXIT_OK if all(r[3] == "PASS" for r in report) else EXIT_NUMERICAL


def _invert(cfg, out, seed):
    _, res, metrics = ex.run_invert(cfg, out, seed=seed)
    print(f"{res.status} after {res.n_iters} iterations, value {res.value:.6e}")
    print(f"relative slowness RMSE {metrics['rmse_initial']:.4f} -> {metrics['rmse_final']:.4f} "
          f"(top third {metrics['rmse_top_initial']:.4f} -> {metrics['rmse_top_final']:.4f})")
    return EXIT_OK


HANDLERS = {
    "forward": _forward,
    "landscape": _landscape,
    "geodesic": _geodesic,
    "freqscan": _freqscan,
    "gradcheck": _gradcheck,
    "invert": _invert,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.command)
        run = cfg["run"]
        seed = run["seed"] if args.seed is None else args.seed
        out = args.out if args.out is not None else cfg.resolve(run["out"])
        code = HANDLERS[args.command](cfg, Path(out), seed)
        atomic_write(Path(out) / "config.ini", args.config.read_text())
        return code
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"otfwi: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FloatingPointError, ex.CheckFailed) as exc:
        print(f"otfwi: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
