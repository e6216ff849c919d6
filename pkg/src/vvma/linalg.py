"""Dense linear algebra helpers: norms, seeded random matrices, a one-sided
Jacobi SVD and the Eckart-Young-Mirsky truncation error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_matrix, make_rng

JACOBI_MAX_SWEEPS = 30
JACOBI_TOL = 1e-12


class SvdConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RandomSpec:
    distribution: str = "gaussian"
    a: float = 0.0  # mean, or lower bound
    b: float = 1.0  # stddev, or upper bound
    seed: int = 0

    def __post_init__(self):
        if self.distribution == "gaussian":
            if not self.b > 0:
                raise ValueError(f"gaussian stddev must be > 0, got {self.b}")
        elif self.distribution == "uniform":
            if not self.a < self.b:
                raise ValueError(f"uniform needs lo < hi, got [{self.a}, {self.b}]")
        else:
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @classmethod
    def gaussian(cls, mean=0.0, stddev=1.0, seed=0):
        return cls("gaussian", mean, stddev, seed)

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0, seed=0):
        return cls("uniform", lo, hi, seed)


def random_matrix(m: int, n: int, spec: RandomSpec) -> np.ndarray:
    if m < 1 or n < 1:
        raise ValueError(f"dimensions must be >= 1, got {m}x{n}")
    gen = make_rng(spec.seed)
    if spec.distribution == "gaussian":
        return gen.normal(spec.a, spec.b, size=(m, n))
    return gen.uniform(spec.a, spec.b, size=(m, n))


def frob_norm(A) -> float:
    A = np.asarray(A, dtype=np.float64)
    return math.sqrt(float(np.sum(A * A)))


def frob_dist(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return frob_norm(A - B)


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray  # m x m
    S: np.ndarray  # min(m, n), nonincreasing
    V: np.ndarray  # n x n
    sweeps: int = 0

    def reconstruct(self) -> np.ndarray:
        p = self.S.size
        return (self.U[:, :p] * self.S) @ self.V[:, :p].T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint column pairs covering all pairs."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        left = players[: size // 2]
        right = players[size // 2:][::-1]
        pairs = [(a, b) for a, b in zip(left, right) if a < n and b < n]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(Q: np.ndarray, m: int) -> np.ndarray:
    """Extend orthonormal columns ``Q`` (m x j) to an m x m orthogonal matrix."""
    j = Q.shape[1]
    if j == m:
        return Q
    # project identity columns off Q, keep the most independent ones
    basis = [Q[:, i] for i in range(j)]
    eye = np.eye(m)
    for e in eye:
        if len(basis) == m:
            break
        v = e.copy()
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    return np.column_stack(basis)


def svd(A, max_sweeps: int = JACOBI_MAX_SWEEPS, tol: float = JACOBI_TOL,
        compute_uv: bool = True) -> SvdResult:
    """Full SVD by one-sided (Hestenes) Jacobi.

    Columns are orthogonalized in round-robin order so each round rotates
    disjoint pairs at once; the result is deterministic for a given input.
    Raises SvdConvergenceError if the off-diagonal mass is still above
    ``tol`` after ``max_sweeps`` sweeps. With ``compute_uv=False`` only the
    singular values are meaningful (U and V are None).
    """
    A = as_matrix(A, "A")
    m, n = A.shape
    if m < n:
        r = svd(A.T, max_sweeps, tol, compute_uv)
        return SvdResult(r.V, r.S, r.U, r.sweeps)

    # rows of G are the columns being orthogonalized; always a private copy
    # because the rotations work in place
    G = np.array(A.T, dtype=np.float64, order="C", copy=True)
    V = np.eye(n) if compute_uv else None
    rounds = _round_robin(n)
    sweeps = 0
    converged = n < 2
    while not converged:
        if sweeps >= max_sweeps:
            raise SvdConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        off = 0.0
        for p, q in rounds:
            gp, gq = G[p], G[q]
            alpha = np.einsum("ij,ij->i", gp, gp)
            beta = np.einsum("ij,ij->i", gq, gq)
            gamma = np.einsum("ij,ij->i", gp, gq)
            denom = np.sqrt(alpha * beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            off = max(off, float(rel.max(initial=0.0)))
            act = rel > tol
            if not act.any():
                continue
            if not act.all():
                p, q = p[act], q[act]
                gp, gq = gp[act], gq[act]
                alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            cs = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            sn = cs * t[:, None]
            G[p] = cs * gp - sn * gq
            G[q] = sn * gp + cs * gq
            if V is not None:
                vp, vq = V[p], V[q]
                V[p] = cs * vp - sn * vq
                V[q] = sn * vp + cs * vq
        converged = off <= tol

    S = np.sqrt(np.einsum("ij,ij->i", G, G))
    order = np.argsort(-S, kind="stable")
    S = S[order]
    if V is None:
        return SvdResult(None, S, None, sweeps)
    G, V = G[order], V[order]
    scale = S[0] if S.size and S[0] > 0 else 1.0
    nonzero = S > scale * 1e-15 * max(m, n)
    U = (G[nonzero] / S[nonzero, None]).T
    S = np.where(nonzero, S, 0.0)
    return SvdResult(_complete_basis(U, m), S, np.ascontiguousarray(V.T), sweeps)


def singular_values(A) -> np.ndarray:
    return svd(A, compute_uv=False).S


def optimal_lowrank_error(A, p: int, S: np.ndarray | None = None) -> float:
    """Smallest Frobenius distance from ``A`` to any matrix of rank <= p."""
    A = as_matrix(A, "A")
    top = min(A.shape)
    if not 0 <= p <= top:
        raise ValueError(f"rank {p} outside [0, {top}]")
    if S is None:
        S = singular_values(A)
    tail = S[p:]
    return math.sqrt(float(np.sum(tail * tail)))


def optimal_lowrank(A, p: int) -> np.ndarray:
    """Truncated-SVD matrix achieving ``optimal_lowrank_error``."""
    res = svd(A)
    return (res.U[:, :p] * res.S[:p]) @ res.V[:, :p].T
