"""Command-line experiments: fit, clocks, simulate, train, rerun.

Exit codes: 0 success, 1 usage error, 2 an internal oracle check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import RNG_NAME, expand, jsonable, make_rng, new_vvma
from .costmodel import (ClockParams, MatmulShape, aggregate, bundled_shapes_path,
                        clocks_baseline, clocks_vvma, load_shapes, report_csv)
from .fit import FitConfig, fit_lowrank, fit_vvma, matched_rank
from .linalg import RandomSpec, optimal_lowrank_error, random_matrix, singular_values
from .systolic import SimConfig, TraceBudgetExceeded, simulate_baseline, simulate_vvma
from .train import TrainConfig, make_teacher_task, parse_arch, train

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2

STRESS_TASK = {
    "arch": "vvma:32:32,tanh,vvma:32:32",
    "k": 8,
    "lr": 0.5,
    "optimizer": "sgd",
    "input_scale": 5.0,
    "steps": 500,
    "batch": 32,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects artifacts for one command and writes its manifest last."""

    def __init__(self, command: str, out: str | None, config: dict, seed: int | None, argv):
        self.command = command
        self.out = Path(out) if out else None
        self.config = config
        self.seed = seed
        self.argv = list(argv)
        self.artifacts: list[str] = []
        self.t0 = time.perf_counter()
        self.timing: dict = {}

    def write(self, name: str, text: str) -> None:
        if self.out is None:
            return
        _write_atomic(self.out / name, text)
        self.artifacts.append(name)

    def finish(self, status: int) -> int:
        if self.out is not None:
            manifest = {
                "command": self.command,
                "argv": self.argv,
                "config": self.config,
                "seed": self.seed,
                "artifacts": sorted(self.artifacts),
                "tool_version": __version__,
                "rng": RNG_NAME,
                "exit_status": status,
                "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "wall_seconds": round(time.perf_counter() - self.t0, 3),
                "timing": self.timing,
            }
            text = json.dumps(jsonable(manifest), indent=2, allow_nan=False) + "\n"
            _write_atomic(self.out / "manifest.json", text)
        return status


def _dumps(doc) -> str:
    return json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _ratio(loss: float, optimal: float) -> float:
    if optimal == 0.0:
        return 1.0 if loss <= 1e-12 else math.inf
    return loss / optimal


def cmd_fit(args, argv) -> int:
    if args.n < 1 or args.k < 1:
        raise UsageError("--n and --k must be >= 1")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if not args.lr > 0:
        raise UsageError("--lr must be > 0")
    methods = ["vvma", "lowrank", "optimal"] if args.baselines == "all" else [args.baselines]
    cfg = FitConfig(learning_rate=args.lr, steps=args.steps, seed=args.seed,
                    log_every=args.log_every)
    spec = (RandomSpec.gaussian(0.0, 1.0, args.seed) if args.dist == "gaussian"
            else RandomSpec.uniform(-1.0, 1.0, args.seed))
    n = args.n
    W = random_matrix(n, n, spec)
    p = matched_rank(n, n, args.k)
    config = {"n": n, "k": args.k, "p": p, "steps": args.steps, "lr": args.lr,
              "dist": args.dist, "baselines": methods, "log_every": args.log_every}
    run = Run("fit", args.out, config, args.seed, argv)

    S = singular_values(W)
    optimal = optimal_lowrank_error(W, p, S=S)
    rows = []
    ok = True
    for method in methods:
        if method == "optimal":
            rows.append(("optimal", p * 2 * n, optimal))
            continue
        t0 = time.perf_counter()
        if method == "vvma":
            _, rep = fit_vvma(W, args.k, cfg)
        else:
            _, rep = fit_lowrank(W, p, cfg)
            # Eckart-Young: no rank-p matrix beats the truncated SVD
            ok &= rep.final_loss >= optimal - 1e-9 * max(1.0, optimal)
        run.timing[method] = round(time.perf_counter() - t0, 3)
        run.write(f"{method}_curve.csv", rep.curve_csv())
        run.write(f"{method}_summary.json", rep.summary_json(include_timing=False) + "\n")
        rows.append((method, rep.params_fitted, rep.final_loss))

    lines = ["method,params,final_loss,ratio_to_optimal"]
    for method, params, loss in rows:
        lines.append(f"{method},{params},{loss!r},{_ratio(loss, optimal)!r}")
    table = "\n".join(lines) + "\n"
    run.write("comparison.csv", table)
    print(table, end="")
    if not ok:
        print("check failed: low-rank fit beat the Eckart-Young optimum", file=sys.stderr)
    return run.finish(EXIT_OK if ok else EXIT_CHECK)


def cmd_clocks(args, argv) -> int:
    path = args.shapes or str(bundled_shapes_path())
    try:
        shapes = load_shapes(path)
        cp = ClockParams(args.k, args.t)
    except (OSError, ValueError) as e:
        raise UsageError(str(e)) from None
    rep = aggregate(shapes, cp)
    config = {"shapes": os.path.basename(path), "k": args.k, "t": args.t,
              "shape_count": len(shapes)}
    run = Run("clocks", args.out, config, None, argv)
    doc = _dumps(rep.to_dict())
    run.write("cost_report.json", doc)
    run.write("cost_report.csv", report_csv(shapes, cp))
    print(doc, end="")
    return run.finish(EXIT_OK)


def _parse_blocks(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--blocks must look like RxC, got {text!r}") from None
    if r < 1 or c < 1:
        raise UsageError("--blocks entries must be >= 1")
    return r, c


def cmd_simulate(args, argv) -> int:
    r, c = _parse_blocks(args.blocks)
    if args.k < 1 or args.t < 1:
        raise UsageError("--k and --t must be >= 1")
    modes = ["baseline", "vvma"] if args.mode == "both" else [args.mode]
    gen = make_rng(args.seed)
    p = new_vvma(args.k, r, c, "normal", rng_seed=int(gen.integers(0, 2**63 - 1)))
    X = gen.standard_normal((c * args.k, args.t))
    ref = expand(p) @ X
    shape = MatmulShape(r * args.k, c * args.k, 1)
    cp = ClockParams(args.k, args.t)
    closed = {"baseline": clocks_baseline(shape, cp), "vvma": clocks_vvma(shape, cp)}
    config = {"k": args.k, "blocks": [r, c], "t": args.t, "modes": modes, "trace": args.trace}
    run = Run("simulate", args.out, config, args.seed, argv)
    tol = 1e-12 * max(1.0, float(np.abs(ref).max()))
    summary = {}
    ok = True
    for mode in modes:
        cfg = SimConfig(args.k, mode, record_trace=args.trace)
        try:
            if mode == "baseline":
                res = simulate_baseline(expand(p), X, cfg)
            else:
                res = simulate_vvma(p, X, cfg)
        except TraceBudgetExceeded as e:
            raise UsageError(str(e)) from None
        err = float(np.abs(res.output - ref).max())
        passed = err <= tol and res.cycles == closed[mode]
        ok &= passed
        summary[mode] = {"cycles": res.cycles, "closed_form": closed[mode],
                         "max_abs_error": err, "oracle_pass": passed}
        if res.trace is not None:
            run.write(f"trace_{mode}.csv", res.trace.to_csv())
    if len(modes) == 2:
        summary["speedup"] = summary["baseline"]["cycles"] / summary["vvma"]["cycles"]
    doc = _dumps(summary)
    run.write("simulation.json", doc)
    print(doc, end="")
    return run.finish(EXIT_OK if ok else EXIT_CHECK)


def cmd_train(args, argv) -> int:
    preset = STRESS_TASK if args.task == "stress" else {}

    def pick(name, default):
        val = getattr(args, name)
        return preset.get(name, default) if val is None else val

    arch = pick("arch", None)
    if arch is None:
        raise UsageError("--arch is required for the teacher task")
    k = pick("k", 4)
    steps = pick("steps", 2000)
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    if not args.clip > 0:
        raise UsageError("--clip must be > 0")
    try:
        teacher = parse_arch(arch, k=k, diag_enabled=True)
        student = parse_arch(arch, k=k, diag_enabled=args.diag == "on")
        cfg = TrainConfig(clip_norm=args.clip, learning_rate=pick("lr", 1e-2), steps=steps,
                          batch=pick("batch", 32), seed=args.seed,
                          optimizer=pick("optimizer", "adam"), log_every=args.log_every)
    except ValueError as e:
        raise UsageError(str(e)) from None
    task = make_teacher_task(teacher, seed=args.teacher_seed,
                             input_scale=pick("input_scale", 1.0))
    config = {"task": args.task, "arch": arch, "k": k, "diag": args.diag,
              "clip": args.clip, "lr": cfg.learning_rate, "steps": steps,
              "batch": cfg.batch, "optimizer": cfg.optimizer,
              "input_scale": task.input_scale, "teacher_seed": args.teacher_seed}
    run = Run("train", args.out, config, args.seed, argv)
    _, rep = train(student, task, cfg)
    run.write("train_curve.csv", rep.curve_csv())
    run.write("train_summary.json", rep.summary_json() + "\n")
    print(rep.summary_json())
    return run.finish(EXIT_OK)


def cmd_rerun(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        old = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot read manifest: {e}") from None
    if args.out:
        if "--out" in old:
            old[old.index("--out") + 1] = args.out
        else:
            old += ["--out", args.out]
    return main(old)


def _float_or_inf(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vvma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit VVMA / low-rank / optimal to a random matrix")
    f.add_argument("--n", type=int, required=True)
    f.add_argument("--k", type=int, default=128)
    f.add_argument("--steps", type=int, default=30_000)
    f.add_argument("--lr", type=float, default=1e-4)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--dist", choices=["gaussian", "uniform"], default="gaussian")
    f.add_argument("--baselines", choices=["vvma", "lowrank", "optimal", "all"], default="all")
    f.add_argument("--log-every", type=int, default=100)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("clocks", help="clock/FLOP report for a shapes file")
    c.add_argument("--shapes", help="JSON array of {name, m, n, repeats[, vvma]}; "
                                    "defaults to the bundled LSTM-like model")
    c.add_argument("--k", type=int, default=32)
    c.add_argument("--t", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_clocks)

    s = sub.add_parser("simulate", help="run the systolic-array simulator")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--blocks", default="8x8")
    s.add_argument("--t", type=int, default=1)
    s.add_argument("--mode", choices=["baseline", "vvma", "both"], default="both")
    s.add_argument("--trace", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="teacher-student training with VVMA layers")
    t.add_argument("--task", choices=["teacher", "stress"], default="teacher")
    t.add_argument("--arch", help='e.g. "vvma:16:16,tanh"')
    t.add_argument("--k", type=int)
    t.add_argument("--diag", choices=["on", "off"], default="on")
    t.add_argument("--clip", type=_float_or_inf, default=1.0,
                   help="global-norm clip; 'inf' disables clipping")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--optimizer", choices=["sgd", "adam"])
    t.add_argument("--input-scale", dest="input_scale", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--teacher-seed", type=int, default=1)
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rerun", help="repeat the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="write to a different directory")
    r.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args, argv)
    except UsageError as e:
        print(f"vvma {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
