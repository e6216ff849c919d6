"""Closed-form clock and FLOP counts for a k x k weight-stationary
matrix unit, for plain tiled execution and for the shared-matrix scheme.

Per block residency the baseline pays 3k cycles of weight loading plus
pipeline fill/drain, then t cycles of streaming.  The shared scheme loads its
single matrix once and then only streams.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Literal

from .core import pad_shape


@dataclass(frozen=True)
class ClockParams:
    k: int = 32
    t: int = 1

    def __post_init__(self):
        if self.k < 1 or self.t < 1:
            raise ValueError(f"k and t must be >= 1, got k={self.k}, t={self.t}")


@dataclass(frozen=True)
class MatmulShape:
    m: int
    n: int
    repeats: int = 1
    name: str = ""
    # shapes kept dense (embeddings, output projections) cost the same in both modes
    vvma: bool = True

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.repeats < 1:
            raise ValueError(f"shape dims and repeats must be >= 1: {self}")

    def blocks(self, k: int) -> int:
        r, c = pad_shape(self.m, self.n, k)
        return r * c


@dataclass(frozen=True)
class CostReport:
    clocks_baseline: int
    clocks_vvma: int
    flops_baseline: int
    flops_vvma: int
    params_baseline: int
    params_vvma: int

    @property
    def speedup(self) -> float:
        return self.clocks_baseline / self.clocks_vvma

    def to_dict(self) -> dict:
        return asdict(self) | {"speedup": self.speedup}


def clocks_baseline(shape: MatmulShape, cp: ClockParams) -> int:
    k, t = cp.k, cp.t
    return shape.repeats * shape.blocks(k) * (3 * k + t)


def clocks_vvma(shape: MatmulShape, cp: ClockParams) -> int:
    if not shape.vvma:
        return clocks_baseline(shape, cp)
    k, t = cp.k, cp.t
    return 3 * k + shape.repeats * shape.blocks(k) * t


def flops(shape: MatmulShape, cp: ClockParams, mode: Literal["baseline", "vvma"]) -> int:
    """Executed multiply-adds counted as 2 FLOPs, plus one multiply per
    diagonal element in the shared scheme."""
    dense = shape.repeats * cp.t * 2 * shape.m * shape.n
    if mode == "baseline" or not shape.vvma:
        return dense
    if mode != "vvma":
        raise ValueError(f"unknown mode {mode!r}")
    return dense + shape.repeats * cp.t * cp.k * shape.blocks(cp.k)


def params_baseline(shape: MatmulShape) -> int:
    return shape.m * shape.n


def params_vvma(shape: MatmulShape, k: int) -> int:
    if not shape.vvma:
        return params_baseline(shape)
    return k * k + shape.blocks(k) * k


def shape_report(shape: MatmulShape, cp: ClockParams) -> CostReport:
    return CostReport(
        clocks_baseline=clocks_baseline(shape, cp),
        clocks_vvma=clocks_vvma(shape, cp),
        flops_baseline=flops(shape, cp, "baseline"),
        flops_vvma=flops(shape, cp, "vvma"),
        params_baseline=params_baseline(shape),
        params_vvma=params_vvma(shape, cp.k),
    )


def aggregate(model: Iterable[MatmulShape], cp: ClockParams) -> CostReport:
    reports = [shape_report(s, cp) for s in model]
    if not reports:
        raise ValueError("model description is empty")
    return CostReport(*(sum(getattr(r, f) for r in reports) for f in
                        ("clocks_baseline", "clocks_vvma", "flops_baseline", "flops_vvma",
                         "params_baseline", "params_vvma")))


def parse_shapes(doc) -> list[MatmulShape]:
    """Shapes from a JSON array of ``{name, m, n, repeats[, vvma]}`` objects."""
    if not isinstance(doc, list):
        raise ValueError("shapes file must hold a JSON array")
    shapes = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ValueError(f"entry {i} is not an object")
        try:
            m, n = item["m"], item["n"]
        except KeyError as e:
            raise ValueError(f"entry {i} lacks field {e.args[0]!r}") from None
        repeats = item.get("repeats", 1)
        for key, val in (("m", m), ("n", n), ("repeats", repeats)):
            if not isinstance(val, int) or isinstance(val, bool):
                raise ValueError(f"entry {i}: {key} must be an integer, got {val!r}")
        vvma = item.get("vvma", True)
        if not isinstance(vvma, bool):
            raise ValueError(f"entry {i}: vvma must be a boolean")
        shapes.append(MatmulShape(m, n, repeats, str(item.get("name", f"shape{i}")), vvma))
    return shapes


def load_shapes(path) -> list[MatmulShape]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})") from None
    return parse_shapes(doc)


def bundled_shapes_path(name: str = "lstm_nmt.json") -> Path:
    return Path(__file__).with_name("data") / name


def report_csv(model: list[MatmulShape], cp: ClockParams) -> str:
    """One row per shape plus a totals row."""
    cols = ["name", "m", "n", "repeats", "vvma", "clocks_baseline", "clocks_vvma",
            "flops_baseline", "flops_vvma", "params_baseline", "params_vvma", "speedup"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in model:
        r = shape_report(s, cp)
        w.writerow([s.name, s.m, s.n, s.repeats, int(s.vvma), r.clocks_baseline, r.clocks_vvma,
                    r.flops_baseline, r.flops_vvma, r.params_baseline, r.params_vvma,
                    f"{r.speedup:.6f}"])
    tot = aggregate(model, cp)
    w.writerow(["TOTAL", "", "", "", "", tot.clocks_baseline, tot.clocks_vvma,
                tot.flops_baseline, tot.flops_vvma, tot.params_baseline, tot.params_vvma,
                f"{tot.speedup:.6f}"])
    return buf.getvalue()
