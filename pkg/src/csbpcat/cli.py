"""Command-line entry point.

Every command that writes ``--out`` also writes ``<out>.manifest.json``
holding the argument vector, the parsed model, the seed and the package
version; ``csbpcat rerun MANIFEST`` replays it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cellmodel import infected_regime, phase_diagram
from .config import ConfigError, Model, load_model
from .env import sample_paths
from .mechanisms import StableMechanism
from .montecarlo import annealed_survival_grid
from .quenched_ode import solve_backward, survival_general, v0_closed_form
from .quenched_stable import functional_J, quenched_survival, sample_feller_batch
from .regimes import classify, fit_rate

__all__ = ["main", "build_parser", "parse_grid", "fmt"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def parse_grid(text: str) -> np.ndarray:
    """``A:B:STEP`` (inclusive of B) or a single value."""
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected A:B:STEP") from None
    if len(vals) == 1:
        return np.array(vals)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected A:B:STEP")
    a, b, step = vals
    if not step > 0 or b < a:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; need STEP > 0 and B >= A")
    k = int(math.floor((b - a) / step + 1e-9))
    return np.round(a + step * np.arange(k + 1), 12)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--n", type=_pos_int, default=10_000)
    common.add_argument("--workers", type=_pos_int, default=None,
                        help="worker threads (default: available CPUs)")
    common.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", type=Path, required=True, help="model file (YAML or JSON)")

    p = argparse.ArgumentParser(prog="csbpcat", description="Branching processes with catastrophes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("classify", parents=[cfg, common], help="regime of a model")

    s = sub.add_parser("survival", parents=[cfg, common], help="survival probabilities")
    s.add_argument("--t-grid", type=parse_grid, default=parse_grid("10"))
    s.add_argument("--method", default="plain")
    s.add_argument("--quenched", action="store_true",
                   help="one row per sampled environment instead of the average")

    r = sub.add_parser("rates", parents=[cfg, common], help="survival over a time grid")
    r.add_argument("--t-grid", type=parse_grid, required=True)
    r.add_argument("--method", default="esscher:auto")
    r.add_argument("--fit", action="store_true", help="fit rate and exponent, show the prediction")

    o = sub.add_parser("ode-check", parents=[cfg, common],
                       help="backward ODE against the closed form (stable mechanisms)")
    o.add_argument("--t-grid", type=parse_grid, default=np.array([1.0, 5.0, 20.0]))
    o.add_argument("--lam", type=float, nargs="+", default=[0.1, 1.0, 10.0])
    o.add_argument("--tol", type=float, default=1e-9)

    d = sub.add_parser("phase-diagram", parents=[common], help="regimes of the cell model")
    d.add_argument("--theta", type=parse_grid, default=parse_grid("0.01:0.49:0.01"))
    d.add_argument("--gr", type=parse_grid, default=parse_grid("0:2:0.02"))

    m = sub.add_parser("simulate", parents=[cfg, common], help="exact Feller runs on a grid")
    m.add_argument("--t-grid", type=parse_grid, required=True)

    rr = sub.add_parser("rerun", help="replay a manifest")
    rr.add_argument("manifest", type=Path)
    rr.add_argument("--out", type=Path, default=None, help="write to this path instead")
    return p


# --- commands -------------------------------------------------------------------

def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def cmd_classify(args, model: Model) -> tuple[str, str]:
    rep = classify(model.spec, model.g, getattr(model.mech, "beta", 1.0))
    extra = ""
    if model.cell is not None:
        extra = str(infected_regime(model.cell)) + "\n"
    row = rep.row()
    csv_text = _rows_csv(list(row), [list(row.values())])
    return str(rep) + "\n" + extra, csv_text


def _need_stable(model: Model, what: str) -> StableMechanism:
    if not isinstance(model.mech, StableMechanism):
        raise ConfigError(f"{what} needs a stable mechanism")
    return model.mech


def cmd_survival(args, model: Model):
    grid = np.asarray(args.t_grid, dtype=float)
    if args.quenched:
        batch = sample_paths(model.spec, float(grid[-1]), args.n, args.seed)
        rows = []
        if isinstance(model.mech, StableMechanism):
            header = ["path_id", "t", "J", "survival"]
            for i in range(len(batch)):
                path = batch.path(i)
                for t in grid:
                    rows.append([i, float(t), functional_J(model.mech, path, float(t)),
                                 quenched_survival(model.mech, model.x0, float(t), path)])
        else:
            # the large-lambda limit is the absorption probability
            header = ["path_id", "t", "absorption_probability_lower",
                      "absorption_probability_upper"]
            for i in range(len(batch)):
                path = batch.path(i)
                for t in grid:
                    lo, hi = survival_general(model.mech, model.x0, float(t), path)
                    rows.append([i, float(t), 1.0 - hi, 1.0 - lo])
        return None, _rows_csv(header, rows)
    mech = _need_stable(model, "annealed survival")
    est = annealed_survival_grid(mech, model.x0, model.spec, grid, args.n, args.method,
                                 args.seed, args.workers)
    return None, _rows_csv(["t", "estimate", "stderr", "method"],
                           [[e.t, e.value, e.stderr, e.method] for e in est])


def cmd_rates(args, model: Model):
    mech = _need_stable(model, "rates")
    grid = np.asarray(args.t_grid, dtype=float)
    est = annealed_survival_grid(mech, model.x0, model.spec, grid, args.n, args.method,
                                 args.seed, args.workers)
    text = _rows_csv(["t", "estimate", "stderr", "method"],
                     [[e.t, e.value, e.stderr, e.method] for e in est])
    if not args.fit:
        return None, text
    rho, kappa, r2 = fit_rate([(e.t, e.value, e.stderr) for e in est])
    rep = classify(model.spec, mech.g, mech.beta)
    fit_text = _rows_csv(["rho_hat", "kappa_hat", "r2", "label", "predicted_rate",
                          "predicted_kappa"],
                         [[rho, kappa, r2, rep.label, rep.exp_rate, rep.poly_exponent]])
    return None, text + "\n" + fit_text


def cmd_ode_check(args, model: Model):
    mech = _need_stable(model, "ode-check")
    grid = np.asarray(args.t_grid, dtype=float)
    batch = sample_paths(model.spec, float(grid.max()), args.n, args.seed)
    rows = []
    for i in range(len(batch)):
        path = batch.path(i)
        for t in grid:
            for lam in args.lam:
                ode = solve_backward(mech, lam, float(t), path, args.tol).v0
                ref = v0_closed_form(mech, lam, float(t), path)
                rows.append([i, float(t), float(lam), ode, ref, abs(ode - ref) / ref])
    return None, _rows_csv(["path_id", "t", "lam", "v0_ode", "v0_closed", "rel_err"], rows)


def cmd_phase_diagram(args, model=None):
    rows = phase_diagram(args.theta, args.gr)
    keys = ["theta", "g_over_r", "label", "boundary_supercritical", "boundary_strong"]
    return None, _rows_csv(keys, [[r[k] for k in keys] for r in rows])


def cmd_simulate(args, model: Model):
    mech = _need_stable(model, "simulate")
    grid = np.asarray(args.t_grid, dtype=float)
    batch = sample_paths(model.spec, float(grid[-1]), args.n, args.seed)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(2 ** 31,)))
    y, kv = sample_feller_batch(mech, model.x0, grid, batch, rng)
    rows = [[i, float(t), kv[i, j], y[i, j]] for i in range(len(batch))
            for j, t in enumerate(grid)]
    return None, _rows_csv(["run_id", "t", "K", "Y"], rows)


COMMANDS = {
    "classify": cmd_classify,
    "survival": cmd_survival,
    "rates": cmd_rates,
    "ode-check": cmd_ode_check,
    "phase-diagram": cmd_phase_diagram,
    "simulate": cmd_simulate,
}


# --- manifest -----------------------------------------------------------------

def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _write_manifest(out: Path, argv, args, model: Model | None, text: str) -> None:
    data = {
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "config": str(args.config) if getattr(args, "config", None) else None,
        "model": model.raw if model is not None else None,
        "output": str(out),
        "sha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    _manifest_path(out).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _rerun(args, parser) -> int:
    try:
        data = json.loads(Path(args.manifest).read_text())
        argv = list(data["argv"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest {args.manifest}: {exc}", file=sys.stderr)
        return 2
    # the model is replayed from the echo so later edits to the file do not matter
    base = Path(args.manifest).parent
    cfg_path = None
    if data.get("model") is not None:
        cfg_path = base / (Path(data["output"]).name + ".rerun-config.json")
        cfg_path.write_text(json.dumps(data["model"]))
        argv = _replace_flag(argv, "--config", str(cfg_path))
    if args.out is not None:
        argv = _replace_flag(argv, "--out", str(args.out))
    try:
        return _run(argv, record=list(data["argv"]))
    finally:
        if cfg_path is not None and cfg_path.exists():
            cfg_path.unlink()


def _replace_flag(argv, flag, value):
    out = list(argv)
    for i, a in enumerate(out):
        if a == flag and i + 1 < len(out):
            out[i + 1] = value
            return out
        if a.startswith(flag + "="):
            out[i] = f"{flag}={value}"
            return out
    return out + [flag, value]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    return _run(argv, record=argv)


def _run(argv, record) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        return _rerun(args, parser)
    try:
        model = load_model(args.config) if getattr(args, "config", None) else None
        screen, text = COMMANDS[args.command](args, model)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"csbpcat: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"csbpcat: error: {exc}", file=sys.stderr)
        return 1
    if screen:
        sys.stdout.write(screen)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        _write_manifest(args.out, record, args, model, text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
