"""Fit VVMA and UV^T low-rank factorizations to a dense target with Adam on
the squared Frobenius loss."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (VvmaParam, as_matrix, expand, jsonable, make_rng, new_vvma, pad_matrix,
                   pad_shape, param_count)
from .linalg import frob_dist, frob_norm


class FitDivergedError(FloatingPointError):
    def __init__(self, step: int, method: str):
        super().__init__(f"{method} fit produced a non-finite loss at step {step}")
        self.step = step
        self.method = method


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 1e-4
    steps: int = 30_000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps!r}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class FitReport:
    final_loss: float
    loss_curve: list[tuple[int, float]]
    wall_seconds: float
    params_fitted: int
    method: str = ""
    config: dict = field(default_factory=dict)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, loss in self.loss_curve:
            w.writerow([step, repr(loss)])
        return buf.getvalue()

    def summary(self, include_timing: bool = True) -> dict:
        doc = {
            "method": self.method,
            "final_loss": self.final_loss,
            "params_fitted": self.params_fitted,
            "config": self.config,
        }
        if include_timing:
            doc["wall_seconds"] = self.wall_seconds
        return doc

    def summary_json(self, include_timing: bool = True) -> str:
        return json.dumps(jsonable(self.summary(include_timing)), indent=2, sort_keys=True,
                          allow_nan=False)


@dataclass(frozen=True)
class LowRankParam:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U and V must be 2-D with a shared inner dimension")
        if self.U.shape[1] < 1:
            raise ValueError("rank must be >= 1")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        return self.U @ self.V.T


class Adam:
    """Adam over a fixed list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _grid(W: np.ndarray, r: int, c: int, k: int) -> np.ndarray:
    """View an (r*k, c*k) matrix as its (r, c, k, k) block grid."""
    return W.reshape(r, k, c, k).transpose(0, 2, 1, 3)


def _vvma_grad_dense(M, diags, scale, diag_enabled, Wg, mask=None):
    """Residual-based gradients; handles a padding mask."""
    blocks = M[None, None] * diags[:, :, None, :] if diag_enabled else np.broadcast_to(M, Wg.shape)
    E = scale * blocks - Wg
    if mask is not None:
        E = E * mask
    loss = float(np.vdot(E, E))
    if diag_enabled:
        grad_M = 2.0 * scale * np.einsum("ijab,ijb->ab", E, diags)
        grad_d = 2.0 * scale * np.einsum("ijab,ab->ijb", E, M)
    else:
        grad_M = 2.0 * scale * E.sum(axis=(0, 1))
        grad_d = np.zeros(Wg.shape[:2] + (0,))
    return grad_M, grad_d, loss


class _GramObjective:
    """Same loss and gradients as ``_vvma_grad_dense`` without forming the
    residual: every term reduces to column norms of M and the per-block
    column dots of M against W."""

    def __init__(self, Wg: np.ndarray):
        self.Wg = np.ascontiguousarray(Wg)
        self.w2 = float(np.vdot(self.Wg, self.Wg))
        self.w_sum = self.Wg.sum(axis=(0, 1))

    def __call__(self, M, diags, scale, diag_enabled):
        col2 = np.einsum("ab,ab->b", M, M)
        if not diag_enabled:
            nblk = self.Wg.shape[0] * self.Wg.shape[1]
            cross = float(np.vdot(M, self.w_sum))
            loss = scale * scale * nblk * float(col2.sum()) - 2.0 * scale * cross + self.w2
            grad_M = 2.0 * scale * (scale * nblk * M - self.w_sum)
            return grad_M, np.zeros(self.Wg.shape[:2] + (0,)), max(loss, 0.0)
        C = np.einsum("ijab,ab->ijb", self.Wg, M)
        d2 = diags * diags
        loss = (scale * scale * float(np.vdot(d2.sum(axis=(0, 1)), col2))
                - 2.0 * scale * float(np.vdot(diags, C)) + self.w2)
        WD = np.einsum("ijab,ijb->ab", self.Wg, diags)
        grad_M = 2.0 * scale * (scale * M * d2.sum(axis=(0, 1)) - WD)
        grad_d = 2.0 * scale * (scale * diags * col2 - C)
        return grad_M, grad_d, max(loss, 0.0)


def vvma_fit_grad(p: VvmaParam, W) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of ``|expand(p) - W|_F^2`` w.r.t. M and every diagonal.

    Returns ``(grad_M, grad_diags, loss)``; ``grad_diags`` has shape (r, c, k),
    or (r, c, 0) when diagonals are disabled.
    """
    W = as_matrix(W, "W")
    if W.shape != p.shape:
        raise ValueError(f"target shape {W.shape} does not match expansion {p.shape}")
    Wg = _grid(W, p.r, p.c, p.k)
    return _GramObjective(Wg)(p.M, p.diags, p.m_scale, p.diag_enabled)


def matched_rank(m: int, n: int, k: int) -> int:
    """Rank whose UV^T parameter count matches a VVMA over an m x n matrix."""
    r, c = pad_shape(m, n, k)
    p = round((k * k + r * c * k) / (m + n))
    return int(min(max(p, 1), min(m, n)))


def _check_loss(loss: float, step: int, method: str) -> None:
    if not math.isfinite(loss):
        raise FitDivergedError(step, method)


def _run(method, params, grad_fn, loss_fn, cfg: FitConfig):
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
    curve = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        grads, loss = grad_fn()
        _check_loss(loss, step, method)
        if step % cfg.log_every == 0:
            curve.append((step, math.sqrt(loss)))
        opt.step(grads)
    final = loss_fn()
    _check_loss(final, cfg.steps, method)
    curve.append((cfg.steps, final))
    return curve, final, time.perf_counter() - t0


def fit_vvma(W, k: int, cfg: FitConfig, diag_enabled: bool = True,
             init: VvmaParam | None = None) -> tuple[VvmaParam, FitReport]:
    """Adam on M and the diagonals jointly; non-multiple shapes are zero-padded
    and the padding is excluded from the loss."""
    W = as_matrix(W, "W")
    m, n = W.shape
    r, c = pad_shape(m, n, k)
    if init is None:
        init = new_vvma(k, r, c, "default", rng_seed=cfg.seed, diag_enabled=diag_enabled)
    elif (init.k, init.r, init.c) != (k, r, c):
        raise ValueError("initial parametrization does not match target shape")
    Wg = _grid(pad_matrix(W, k), r, c, k)
    mask = None
    if (r * k, c * k) != (m, n):
        mask = np.zeros((r * k, c * k))
        mask[:m, :n] = 1.0
        mask = _grid(mask, r, c, k)

    M = np.array(init.M)
    diags = np.array(init.diags)
    scale, enabled = init.m_scale, init.diag_enabled
    params = [M, diags] if enabled else [M]

    gram = _GramObjective(Wg) if mask is None else None

    def grad_fn():
        if gram is not None:
            gM, gd, loss = gram(M, diags, scale, enabled)
        else:
            gM, gd, loss = _vvma_grad_dense(M, diags, scale, enabled, Wg, mask)
        return ([gM, gd] if enabled else [gM]), loss

    def result():
        return VvmaParam(M, diags, diag_enabled=enabled, m_scale=scale)

    def loss_fn():
        dense = expand_cropped(result(), m, n)
        return frob_dist(dense, W)

    curve, final, secs = _run("vvma", params, grad_fn, loss_fn, cfg)
    out = result()
    report = FitReport(final, curve, secs, param_count(out), "vvma" if enabled else "vvma-nodiag",
                       asdict(cfg) | {"k": k, "diag_enabled": enabled, "m_scale": scale})
    return out, report


def expand_cropped(p: VvmaParam, m: int, n: int) -> np.ndarray:
    return expand(p)[:m, :n]


def init_lowrank(W: np.ndarray, p: int, seed: int) -> LowRankParam:
    """Gaussian factors rescaled so that |U V^T|_F = |W|_F / 10."""
    m, n = W.shape
    gen = make_rng(seed)
    U = gen.normal(0.0, 1.0 / math.sqrt(p), size=(m, p))
    V = gen.normal(0.0, 1.0 / math.sqrt(p), size=(n, p))
    cur = frob_norm(U @ V.T)
    target = frob_norm(W) / 10.0
    if cur > 0 and target > 0:
        s = math.sqrt(target / cur)
        U *= s
        V *= s
    return LowRankParam(U, V)


def fit_lowrank(W, p: int, cfg: FitConfig,
                init: LowRankParam | None = None) -> tuple[LowRankParam, FitReport]:
    W = as_matrix(W, "W")
    m, n = W.shape
    if not 1 <= p <= min(m, n):
        raise ValueError(f"rank {p} outside [1, {min(m, n)}]")
    if init is None:
        init = init_lowrank(W, p, cfg.seed)
    U = np.array(init.U, dtype=np.float64)
    V = np.array(init.V, dtype=np.float64)

    w2 = float(np.vdot(W, W))

    # |UV^T - W|^2 expanded so no m x n residual is formed
    def grad_fn():
        UtU, VtV = U.T @ U, V.T @ V
        WV, WtU = W @ V, W.T @ U
        loss = float(np.vdot(UtU, VtV)) - 2.0 * float(np.vdot(U, WV)) + w2
        return [2.0 * (U @ VtV - WV), 2.0 * (V @ UtU - WtU)], max(loss, 0.0)

    def loss_fn():
        return frob_dist(U @ V.T, W)

    curve, final, secs = _run("lowrank", [U, V], grad_fn, loss_fn, cfg)
    report = FitReport(final, curve, secs, p * (m + n), "lowrank", asdict(cfg) | {"p": p})
    return LowRankParam(U, V), report
