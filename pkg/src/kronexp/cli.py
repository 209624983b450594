"""Experiment front end: coefficient verification, convergence, patterns, work-precision.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, splitting
from .integrators import (
    METHODS,
    NumericalFailure,
    error_inf,
    fit_order,
    integrate,
    reference_solution,
)
from .models import MODELS, GridSpec, dominant_modes
from .tensor import ORACLE_CAP, OracleCapError
from .tensor_io import atomic_write, to_csv

log = logging.getLogger("kronexp")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

THIRD_ORDER = ("exprk3ds_real", "exprk3ds_cplx", "exprk3_dense")

# (n, T, ladder for second-order methods, ladder for third-order methods)
DESK_CONVERGENCE = {
    "schnakenberg2d": (32, 0.1, (400, 800, 1600), (400, 800, 1600)),
    "fhn3d": (16, 0.05, (50, 100, 200), (50, 100, 200)),
}
PAPER_CONVERGENCE = {
    "schnakenberg2d": (150, 0.25, (3000, 4000, 5000, 6000), (1000, 1500, 2000, 2500)),
    "fhn3d": (64, 5.0, (60000, 65000, 70000, 75000), (14000, 16000, 18000, 20000)),
}
DESK_PATTERN = {"schnakenberg2d": (64, 2.0, 4000), "fhn3d": (32, 150.0, 10000)}
PAPER_PATTERN = {"schnakenberg2d": (150, 2.0, 4000), "fhn3d": (64, 150.0, 10000)}

SLICE_X3 = 1.55


class ValidationError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str = "schnakenberg2d"
    n: int | None = None
    T: float | None = None
    steps: tuple | None = None
    methods: tuple = ("etd2rkds", "exprk3ds_real", "exprk3ds_cplx")
    seed: int = 0
    out: Path = Path("out")
    snapshot_every: int = 0
    paper_scale: bool = False
    reference_factor: int = 8
    amplitude: float | None = None
    model_params: dict = field(default_factory=dict)

    def validate(self):
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
        if self.n is not None and self.n < 3:
            raise ValidationError("n must be >= 3")
        if self.T is not None and self.T <= 0:
            raise ValidationError("T must be positive")
        if self.steps is not None and any(s < 1 for s in self.steps):
            raise ValidationError("steps must be positive")
        if self.reference_factor < 1:
            raise ValidationError("reference factor must be >= 1")
        d = 2 if self.model == "schnakenberg2d" else 3
        n = self.n or 0
        if any(m.endswith("_dense") for m in self.methods) and n**d > ORACLE_CAP:
            raise ValidationError(f"dense methods need N = n^{d} <= {ORACLE_CAP}")

    def provenance(self, method: str | None = None) -> list[str]:
        lines = [f"# kronexp {__version__}", f"# model={self.model}", f"# n={self.n}", f"# T={self.T!r}",
                 f"# seed={self.seed}", f"# method={method or ','.join(self.methods)}"]
        if self.steps:
            lines.append("# steps=" + ",".join(str(s) for s in self.steps))
        lines.append(f"# reference=exprk3ds_real x{self.reference_factor}")
        for k, v in sorted(self.model_params.items()):
            lines.append(f"# {k}={v}")
        return lines


def _parse_steps(text: str) -> tuple:
    try:
        vals = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError as exc:
        raise ValidationError(f"bad step list {text!r}") from exc
    if not vals:
        raise ValidationError("empty step list")
    return vals


def _apply_config_file(cfg: ExperimentConfig, path: Path) -> ExperimentConfig:
    """Merge ``key = value`` lines from ``path``; these override command-line flags."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    param_names = {f.name for cls in (MODELS[m][1] for m in MODELS) for f in fields(cls)}
    updates, params = {}, dict(cfg.model_params)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "model":
            updates["model"] = val
        elif key == "n":
            updates["n"] = int(val)
        elif key == "T":
            updates["T"] = float(val)
        elif key == "steps":
            updates["steps"] = _parse_steps(val)
        elif key in ("method", "methods"):
            updates["methods"] = tuple(s.strip() for s in val.split(","))
        elif key == "seed":
            updates["seed"] = int(val)
        elif key == "out":
            updates["out"] = Path(val)
        elif key == "snapshot_every":
            updates["snapshot_every"] = int(val)
        elif key == "reference_factor":
            updates["reference_factor"] = int(val)
        elif key == "amplitude":
            updates["amplitude"] = float(val)
        elif key in param_names:
            params[key] = float(val)
        else:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
    return replace(cfg, model_params=params, **updates)


def build_problem(cfg: ExperimentConfig, n: int, T: float):
    factory, params_cls = MODELS[cfg.model]
    known = {f.name for f in fields(params_cls)}
    stray = sorted(set(cfg.model_params) - known)
    if stray:
        raise ValidationError(f"parameters {stray} do not apply to {cfg.model}")
    extra = dict(cfg.model_params)
    params = replace(params_cls(), seed=cfg.seed, **extra)
    if cfg.amplitude is not None:
        params = replace(params, amplitude=cfg.amplitude)
    return factory(n, params, T=T)


def _ladders(cfg: ExperimentConfig):
    table = PAPER_CONVERGENCE if cfg.paper_scale else DESK_CONVERGENCE
    n0, T0, second, third = table[cfg.model]
    n = cfg.n or n0
    T = cfg.T or T0
    ladders = {}
    for m in cfg.methods:
        ladders[m] = cfg.steps or (third if m in THIRD_ORDER else second)
    return n, T, ladders


def _run_ladder(cfg):
    n, T, ladders = _ladders(cfg)
    cfg = replace(cfg, n=n, T=T)
    cfg.validate()
    p = build_problem(cfg, n, T)
    base = max(max(l) for l in ladders.values())
    log.info("reference: exprk3ds_real with %d steps", cfg.reference_factor * base)
    ref = reference_solution(p, base, factor=cfg.reference_factor)
    rows = []
    for m, ladder in ladders.items():
        ok_steps, ok_errs, mrows = [], [], []
        for s in ladder:
            try:
                rep = integrate(p, m, s)
            except NumericalFailure as exc:
                log.warning("%s with %d steps failed: %s", m, s, exc)
                mrows.append({"method": m, "steps": s, "tau": T / s, "err_inf": float("nan"),
                              "status": f"failed@{exc.step}", "wall_time": float("nan"),
                              "tucker_ops": 0, "kronsum_actions": 0})
                continue
            err = error_inf(rep.states, ref)
            ok_steps.append(s)
            ok_errs.append(err)
            mrows.append({"method": m, "steps": s, "tau": T / s, "err_inf": err, "status": "ok",
                          "wall_time": rep.wall_time, "tucker_ops": rep.tucker_ops,
                          "kronsum_actions": rep.kronsum_actions})
        slope = fit_order(ok_steps, ok_errs) if len(ok_steps) >= 2 else float("nan")
        for r in mrows:
            r["slope"] = slope
        rows.extend(mrows)
        log.info("%s: fitted order %.3f", m, slope)
    return cfg, rows


def _csv_text(cfg, rows, columns) -> str:
    buf = io.StringIO()
    buf.write("\n".join(cfg.provenance()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def cmd_verify_coefficients(args) -> int:
    schemes = splitting.exposed_schemes(d=args.d)
    if args.perturb:
        schemes[0] = schemes[0].with_eta(0, schemes[0].terms[0].eta + args.perturb)
    worst = 0.0
    for s in schemes:
        r = max(splitting.order_condition_residuals(s))
        worst = max(worst, r)
        status = "ok" if r <= args.tol else "FAIL"
        print(f"{s.label():45s} max residual {r:.3e}  {status}")
    if args.csv:
        atomic_write(args.csv, splitting.coefficients_csv(schemes))
    passed = worst <= args.tol
    print(f"{len(schemes)} schemes, max residual {worst:.3e} {'<=' if passed else '>'} {args.tol:g}")
    return EXIT_OK if passed else EXIT_NUMERICAL


def cmd_convergence(cfg: ExperimentConfig) -> int:
    cfg, rows = _run_ladder(cfg)
    cols = ["method", "steps", "tau", "err_inf", "slope", "status"]
    atomic_write(cfg.out / "convergence.csv", _csv_text(cfg, rows, cols))
    for r in rows:
        print(f"{r['method']:14s} {r['steps']:7d} err={r['err_inf']:.3e} slope={r['slope']:.3f}")
    return EXIT_NUMERICAL if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_workprecision(cfg: ExperimentConfig) -> int:
    cfg, rows = _run_ladder(cfg)
    cols = ["method", "steps", "tau", "err_inf", "wall_time", "tucker_ops", "kronsum_actions", "status"]
    atomic_write(cfg.out / "workprecision.csv", _csv_text(cfg, rows, cols))
    by = {(r["method"], r["steps"]): r for r in rows}
    for (m, s), r in by.items():
        other = by.get(("exprk3ds_real", s))
        if m == "exprk3ds_cplx" and other and r["wall_time"] <= other["wall_time"]:
            log.warning("soft check: exprk3ds_cplx (%.2fs) not slower than exprk3ds_real (%.2fs) at %d steps",
                        r["wall_time"], other["wall_time"], s)
    for r in rows:
        print(f"{r['method']:14s} {r['steps']:7d} err={r['err_inf']:.3e} "
              f"time={r['wall_time']:.2f}s tucker={r['tucker_ops']}")
    return EXIT_NUMERICAL if any(r["status"] != "ok" for r in rows) else EXIT_OK


def field_slice(U: np.ndarray, grid: GridSpec) -> np.ndarray:
    """2D view for snapshots: the field itself, or the x_3 ~ 1.55 plane in 3D."""
    if U.ndim == 2:
        return U
    k = int(np.argmin(np.abs(grid.x - SLICE_X3)))
    return U[:, :, k]


def to_pgm(F: np.ndarray) -> bytes:
    """8-bit binary PGM with linear min-max scaling; rows are the second index.

    A field whose range is at roundoff level relative to its magnitude is
    drawn as uniform black rather than stretched noise.
    """
    F = np.asarray(F, dtype=float)
    lo, hi = float(F.min()), float(F.max())
    if hi - lo > 1e-12 * max(1.0, abs(lo), abs(hi)):
        img = np.rint((F - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        img = np.zeros(F.shape, dtype=np.uint8)
    img = np.ascontiguousarray(img.T[::-1])  # x_2 upward
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()


def _write_snapshot(out: Path, tag: str, U: np.ndarray, grid: GridSpec) -> None:
    S = field_slice(U, grid)
    atomic_write(out / f"u_{tag}.csv", to_csv(S))
    atomic_write(out / f"u_{tag}.pgm", to_pgm(S))


def cmd_pattern(cfg: ExperimentConfig) -> int:
    n0, T0, steps0 = (PAPER_PATTERN if cfg.paper_scale else DESK_PATTERN)[cfg.model]
    n, T = cfg.n or n0, cfg.T or T0
    steps = cfg.steps[0] if cfg.steps else steps0
    method = cfg.methods[0]
    cfg = replace(cfg, n=n, T=T, steps=(steps,), methods=(method,))
    cfg.validate()
    p = build_problem(cfg, n, T)
    grid = p.meta["grid"]

    def monitor(step, t, U, counter):
        log.info("step=%d t=%.6g tucker_ops=%d kronsum=%d", step, t, counter.tucker, counter.kronsum)
        _write_snapshot(cfg.out, f"step{step:07d}", U[0], grid)

    rep = integrate(p, method, steps, monitor=monitor if cfg.snapshot_every else None,
                    monitor_every=cfg.snapshot_every)
    U = rep.states[0]
    _write_snapshot(cfg.out, "final", U, grid)
    modes = dominant_modes(U, grid)
    lines = cfg.provenance(method) + [f"# digest={rep.digest()}", "# mode amplitude"]
    lines += [f"{','.join(str(k) for k in idx)} {amp:.6e}" for idx, amp in modes[:20]]
    atomic_write(cfg.out / "modes.txt", "\n".join(lines) + "\n")
    top = ", ".join(f"({','.join(map(str, idx))})" for idx, _ in modes[:3]) or "none"
    print(f"{method} steps={steps} wall={rep.wall_time:.1f}s top modes: {top}")
    return EXIT_OK


def _experiment_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--model", choices=sorted(MODELS), default="schnakenberg2d")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--steps", type=str, help="comma-separated step counts")
    p.add_argument("--method", type=str, help="comma-separated method names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--reference-factor", type=int, default=8)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--config", type=Path, help="key = value file; its entries override flags")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kronexp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kronexp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify-coefficients", help="check the splitting tables against their order conditions")
    v.add_argument("--tol", type=float, default=1e-12)
    v.add_argument("--d", type=int, default=3, help="dimension for the d-dimensional tables")
    v.add_argument("--perturb", type=float, default=0.0, help="add this to one weight (negative control)")
    v.add_argument("--csv", type=Path, help="dump coefficients (30 significant digits)")

    _experiment_parser(sub, "convergence", "error vs steps against a fine reference")
    _experiment_parser(sub, "pattern", "integrate to T and report the Turing pattern")
    _experiment_parser(sub, "workprecision", "error, wall time and operation counts per run")
    return parser


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig(model=args.model, n=args.n, T=args.T, seed=args.seed, out=args.out,
                           snapshot_every=args.snapshot_every, paper_scale=args.paper_scale,
                           reference_factor=args.reference_factor, amplitude=args.amplitude)
    if args.steps:
        cfg.steps = _parse_steps(args.steps)
    if args.method:
        cfg.methods = tuple(s.strip() for s in args.method.split(","))
    elif args.command == "pattern":
        cfg.methods = ("exprk3ds_real",)
    if args.config:
        cfg = _apply_config_file(cfg, args.config)
    cfg.validate()
    return cfg


def _thread_limit():
    val = os.environ.get("KRONEXP_THREADS")
    if not val:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(val)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    commands = {"convergence": cmd_convergence, "pattern": cmd_pattern, "workprecision": cmd_workprecision}
    try:
        with _thread_limit():
            if args.command == "verify-coefficients":
                return cmd_verify_coefficients(args)
            return commands[args.command](config_from_args(args))
    except (ValidationError, OracleCapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
