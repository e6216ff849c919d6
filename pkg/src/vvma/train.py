"""Small sequential networks with dense and VVMA layers, hand-written
backward passes, global-norm gradient clipping and a teacher-student
regression task."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .core import NO_DIAG_SCALE, jsonable, make_rng, new_vvma, pad_shape
from .fit import Adam

LayerKind = Literal["dense", "vvma", "relu", "tanh"]


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    k: int = 0
    diag_enabled: bool = True
    m_scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("dense", "vvma", "relu", "tanh"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1: {self}")
        if self.kind in ("relu", "tanh") and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind} must keep its width")
        if self.kind == "vvma":
            if self.k < 1:
                raise ValueError("vvma layer needs k >= 1")
            if self.m_scale is None:
                object.__setattr__(self, "m_scale", 1.0 if self.diag_enabled else NO_DIAG_SCALE)

    @property
    def grid(self) -> tuple[int, int]:
        return pad_shape(self.out_dim, self.in_dim, self.k)


Model = list[LayerSpec]
Params = list[dict[str, np.ndarray]]


def parse_arch(text: str, k: int = 0, diag_enabled: bool = True) -> Model:
    """Parse e.g. ``"vvma:16:16,tanh,dense:16:4"`` into layer specs.

    Linear layers are written ``kind:in:out``; activations take the width
    of the preceding layer.
    """
    model: Model = []
    width = None
    for raw in text.split(","):
        tok = raw.strip()
        if not tok:
            raise ValueError(f"empty layer in architecture {text!r}")
        parts = tok.split(":")
        kind = parts[0]
        if kind in ("relu", "tanh"):
            if len(parts) != 1 or width is None:
                raise ValueError(f"activation {tok!r} must follow a linear layer")
            model.append(LayerSpec(kind, width, width))
            continue
        if kind not in ("dense", "vvma") or len(parts) != 3:
            raise ValueError(f"bad layer {tok!r}; expected dense:IN:OUT, vvma:IN:OUT, relu or tanh")
        try:
            i, o = int(parts[1]), int(parts[2])
        except ValueError:
            raise ValueError(f"bad dims in layer {tok!r}") from None
        if width is not None and i != width:
            raise ValueError(f"layer {tok!r} expects width {i}, previous layer gives {width}")
        if kind == "vvma":
            model.append(LayerSpec("vvma", i, o, k=k, diag_enabled=diag_enabled))
        else:
            model.append(LayerSpec("dense", i, o))
        width = o
    return model


def init_params(model: Model, seed: int, diag_init: Literal["ones", "normal"] = "ones") -> Params:
    """Glorot-uniform dense weights and VVMA shared matrices, zero biases.

    ``diag_init="normal"`` draws diagonals from N(0, 1) instead of ones,
    which teachers use so that their blocks actually differ.
    """
    gen = make_rng(seed)
    params: Params = []
    for idx, spec in enumerate(model):
        if spec.kind == "dense":
            s = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
            params.append({"W": gen.uniform(-s, s, size=(spec.out_dim, spec.in_dim)),
                           "b": np.zeros(spec.out_dim)})
        elif spec.kind == "vvma":
            r, c = spec.grid
            sub_seed = int(gen.integers(0, 2**63 - 1))
            p = new_vvma(spec.k, r, c, "default", rng_seed=sub_seed)
            diags = np.array(p.diags)
            if diag_init == "normal":
                diags = gen.standard_normal(diags.shape)
            layer = {"M": np.array(p.M), "b": np.zeros(spec.out_dim)}
            if spec.diag_enabled:
                layer["diags"] = diags
            params.append(layer)
        else:
            params.append({})
    return params


def _vvma_forward(spec: LayerSpec, prm, X):
    r, c = spec.grid
    k = spec.k
    B = X.shape[0]
    xp = np.zeros((B, c * k))
    xp[:, : spec.in_dim] = X
    xb = xp.reshape(B, c, k)
    if spec.diag_enabled:
        z = np.einsum("ijk,bjk->bik", prm["diags"], xb)
    else:
        z = np.broadcast_to(xb.sum(axis=1, keepdims=True), (B, r, k))
    y = spec.m_scale * (z @ prm["M"].T)
    return y.reshape(B, r * k)[:, : spec.out_dim] + prm["b"], (xb, z)


def _vvma_backward(spec: LayerSpec, prm, cache, G):
    xb, z = cache
    r, c = spec.grid
    k = spec.k
    B = G.shape[0]
    gp = np.zeros((B, r * k))
    gp[:, : spec.out_dim] = G
    Gb = gp.reshape(B, r, k)
    s = spec.m_scale
    grads = {"M": s * np.einsum("bia,bic->ac", Gb, z), "b": G.sum(axis=0)}
    dz = s * (Gb @ prm["M"])
    if spec.diag_enabled:
        grads["diags"] = np.einsum("bik,bjk->ijk", dz, xb)
        dx = np.einsum("bik,ijk->bjk", dz, prm["diags"])
    else:
        dx = np.broadcast_to(dz.sum(axis=1, keepdims=True), (B, c, k))
    return grads, dx.reshape(B, c * k)[:, : spec.in_dim]


def forward(model: Model, params: Params, X) -> list:
    """Run the network on a batch (rows are samples).

    Returns ``[(input, cache), ...]`` per layer followed by the final output
    as the last element.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model[0].in_dim:
        raise ValueError(f"input batch must have shape (B, {model[0].in_dim}), got {X.shape}")
    acts = []
    h = X
    for spec, prm in zip(model, params):
        if h.shape[1] != spec.in_dim:
            raise ValueError(f"layer {spec} got width {h.shape[1]}")
        if spec.kind == "dense":
            out, cache = h @ prm["W"].T + prm["b"], None
        elif spec.kind == "vvma":
            out, cache = _vvma_forward(spec, prm, h)
        elif spec.kind == "relu":
            out, cache = np.maximum(h, 0.0), None
        else:
            out = np.tanh(h)
            cache = out
        acts.append((h, cache))
        h = out
    acts.append(h)
    return acts


def mse(pred, target) -> float:
    d = pred - target
    return float(np.mean(d * d))


def backward(model: Model, params: Params, acts: list, targets) -> tuple[Params, np.ndarray]:
    """Gradients of the mean-squared error for every parameter, plus the
    gradient with respect to the network input."""
    pred = acts[-1]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != pred.shape:
        raise ValueError(f"targets shape {targets.shape} != output shape {pred.shape}")
    G = 2.0 * (pred - targets) / pred.size
    grads: Params = [None] * len(model)  # type: ignore[list-item]
    for idx in range(len(model) - 1, -1, -1):
        spec, prm = model[idx], params[idx]
        h, cache = acts[idx]
        if spec.kind == "dense":
            grads[idx] = {"W": G.T @ h, "b": G.sum(axis=0)}
            G = G @ prm["W"]
        elif spec.kind == "vvma":
            grads[idx], G = _vvma_backward(spec, prm, cache, G)
        elif spec.kind == "relu":
            grads[idx] = {}
            G = G * (h > 0)
        else:
            grads[idx] = {}
            G = G * (1.0 - cache * cache)
    return grads, G


def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for layer in grads for g in layer.values()))


def clip_global_norm(grads: Params, clip_norm: float) -> Params:
    """Scale all gradients jointly so their combined 2-norm is at most ``clip_norm``."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be > 0")
    g = global_norm(grads)
    if not g > clip_norm:
        return grads
    s = clip_norm / g
    return [{name: s * arr for name, arr in layer.items()} for layer in grads]


@dataclass(frozen=True)
class TrainConfig:
    clip_norm: float = 1.0
    learning_rate: float = 1e-2
    steps: int = 2000
    batch: int = 32
    seed: int = 0
    optimizer: Literal["sgd", "adam"] = "adam"
    log_every: int = 50

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("steps", "batch", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TeacherTask:
    """Regression onto a frozen random network's outputs."""

    teacher: Model
    teacher_params: Params
    input_scale: float = 1.0
    eval_size: int = 256
    eval_seed: int = 12345
    eval_x: np.ndarray = field(init=False, repr=False)
    eval_y: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.eval_x = self.sample_inputs(make_rng(self.eval_seed), self.eval_size)
        self.eval_y = self.targets(self.eval_x)

    @property
    def in_dim(self) -> int:
        return self.teacher[0].in_dim

    def sample_inputs(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return self.input_scale * gen.standard_normal((n, self.in_dim))

    def targets(self, X) -> np.ndarray:
        return forward(self.teacher, self.teacher_params, X)[-1]


def make_teacher_task(teacher: Model, seed: int, input_scale: float = 1.0,
                      eval_size: int = 256) -> TeacherTask:
    return TeacherTask(teacher, init_params(teacher, seed, diag_init="normal"),
                       input_scale=input_scale, eval_size=eval_size, eval_seed=seed + 1)


@dataclass
class TrainReport:
    loss_curve: list[tuple[int, float]]
    diverged: bool
    final_loss: float
    diverged_at: int | None = None
    config: dict = field(default_factory=dict)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, loss in self.loss_curve:
            w.writerow([step, repr(loss)])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {"final_loss": self.final_loss if math.isfinite(self.final_loss) else None,
               "diverged": self.diverged, "diverged_at": self.diverged_at,
               "config": self.config}
        return json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False)


def _flat(params: Params) -> list[np.ndarray]:
    return [arr for layer in params for _, arr in sorted(layer.items())]


def train(model: Model, task: TeacherTask, cfg: TrainConfig,
          params: Params | None = None) -> tuple[Params, TrainReport]:
    """Minibatch training on fresh teacher samples; losses are logged on the
    task's fixed evaluation set.  Divergence stops the run and is reported."""
    if model[0].in_dim != task.in_dim or model[-1].out_dim != task.teacher[-1].out_dim:
        raise ValueError("student and teacher dimensions differ")
    if params is None:
        params = init_params(model, cfg.seed)
    params = [{n: np.array(a, dtype=np.float64) for n, a in layer.items()} for layer in params]
    flat = _flat(params)
    adam = Adam(flat, cfg.learning_rate) if cfg.optimizer == "adam" else None
    gen = make_rng(cfg.seed + 1)
    curve: list[tuple[int, float]] = []
    diverged_at = None

    def eval_loss() -> float:
        return mse(forward(model, params, task.eval_x)[-1], task.eval_y)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for step in range(cfg.steps):
            if step % cfg.log_every == 0:
                loss = eval_loss()
                curve.append((step, loss))
                if not math.isfinite(loss):
                    diverged_at = step
                    break
            X = task.sample_inputs(gen, cfg.batch)
            Y = task.targets(X)
            acts = forward(model, params, X)
            if not math.isfinite(mse(acts[-1], Y)):
                diverged_at = step
                break
            grads, _ = backward(model, params, acts, Y)
            grads = clip_global_norm(grads, cfg.clip_norm)
            gflat = _flat(grads)
            if adam is not None:
                adam.step(gflat)
            else:
                for p, g in zip(flat, gflat):
                    p -= cfg.learning_rate * g
        if diverged_at is None:
            loss = eval_loss()
            curve.append((cfg.steps, loss))
            if not math.isfinite(loss):
                diverged_at = cfg.steps
    diverged = diverged_at is not None or any(not math.isfinite(v) for _, v in curve)
    final = curve[-1][1] if curve else float("nan")
    if diverged_at is not None and (not curve or curve[-1][0] != diverged_at):
        curve.append((diverged_at, float("inf")))
        final = float("inf")
    conf = asdict(cfg) | {"arch": [asdict(s) for s in model]}
    return params, TrainReport(curve, diverged, final, diverged_at, conf)
