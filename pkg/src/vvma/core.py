"""VVMA parametrization: one shared k x k matrix tiled over a block grid,
each tile right-multiplied by its own diagonal.

The (i, j) block of the represented matrix is ``m_scale * M @ diag(v[i, j])``.
With diagonals disabled every block is ``m_scale * M``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

InitSpec = Literal["default", "zeros", "ones", "normal"]

NO_DIAG_SCALE = 0.1
# largest dense expansion we agree to describe (entries must be indexable)
_MAX_ENTRIES = 2**62


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used everywhere in the package (Philox, counter-based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


RNG_NAME = "numpy.random.Philox-4x64"


def jsonable(obj):
    """Replace non-finite floats by the strings "inf", "-inf" and "nan" so
    documents stay strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _check_dims(**dims: int) -> None:
    for name, value in dims.items():
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise TypeError(f"{name} must be an integer, got {value!r}")
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


@dataclass(frozen=True, eq=False)
class VvmaParam:
    """Shared matrix ``M`` (k x k) and an (r, c, k) array of diagonal vectors.

    Arrays are copied and made read-only on construction.
    """

    M: np.ndarray
    diags: np.ndarray
    diag_enabled: bool = True
    m_scale: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        M = as_matrix(self.M, "M")
        if M.shape[0] != M.shape[1]:
            raise ValueError(f"M must be square, got {M.shape}")
        diags = np.asarray(self.diags, dtype=np.float64)
        k = M.shape[0]
        if diags.ndim != 3 or diags.shape[2] != k:
            raise ValueError(f"diags must have shape (r, c, {k}), got {diags.shape}")
        if diags.shape[0] < 1 or diags.shape[1] < 1:
            raise ValueError("diags grid must have at least one block")
        if not np.all(np.isfinite(diags)):
            raise ValueError("diags contain non-finite entries")
        scale = self.m_scale
        if scale is None:
            scale = 1.0 if self.diag_enabled else NO_DIAG_SCALE
        scale = float(scale)
        if not math.isfinite(scale):
            raise ValueError("m_scale must be finite")
        object.__setattr__(self, "M", _frozen(M))
        object.__setattr__(self, "diags", _frozen(diags))
        object.__setattr__(self, "diag_enabled", bool(self.diag_enabled))
        object.__setattr__(self, "m_scale", scale)

    @property
    def k(self) -> int:
        return self.M.shape[0]

    @property
    def r(self) -> int:
        return self.diags.shape[0]

    @property
    def c(self) -> int:
        return self.diags.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.r * self.k, self.c * self.k

    def effective_diags(self) -> np.ndarray:
        """Diagonals actually applied (all ones when disabled)."""
        if self.diag_enabled:
            return self.diags
        return np.ones_like(self.diags)

    def replace(self, **changes) -> "VvmaParam":
        fields = dict(M=self.M, diags=self.diags, diag_enabled=self.diag_enabled,
                      m_scale=self.m_scale)
        fields.update(changes)
        return VvmaParam(**fields)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "r": self.r,
            "c": self.c,
            "diag_enabled": self.diag_enabled,
            "m_scale": self.m_scale,
            "M": self.M.ravel().tolist(),
            "diags": self.diags.reshape(self.r * self.c, self.k).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VvmaParam":
        k, r, c = int(doc["k"]), int(doc["r"]), int(doc["c"])
        _check_dims(k=k, r=r, c=c)
        M = np.asarray(doc["M"], dtype=np.float64)
        diags = np.asarray(doc["diags"], dtype=np.float64)
        if M.size != k * k:
            raise ValueError(f"M has {M.size} entries, expected {k * k}")
        if diags.size != r * c * k:
            raise ValueError(f"diags have {diags.size} entries, expected {r * c * k}")
        return cls(M.reshape(k, k), diags.reshape(r, c, k),
                   diag_enabled=bool(doc["diag_enabled"]), m_scale=float(doc["m_scale"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "VvmaParam":
        return cls.from_dict(json.loads(text))


def new_vvma(k: int, r: int, c: int, init: InitSpec = "default", rng_seed: int = 0,
             diag_enabled: bool = True, m_scale: float | None = None) -> VvmaParam:
    """Build a parametrization with ``init`` in {default, zeros, ones, normal}.

    ``default`` draws M uniformly on [-s, s] with s = sqrt(6 / (2k)) and sets
    every diagonal to ones; ``normal`` draws both M and diagonals from N(0, 1).
    """
    _check_dims(k=k, r=r, c=c)
    if (r * k) * (c * k) > _MAX_ENTRIES or k * k + r * c * k > _MAX_ENTRIES:
        raise OverflowError(f"dimensions k={k}, r={r}, c={c} overflow")
    if init == "zeros":
        M = np.zeros((k, k))
        diags = np.zeros((r, c, k))
    elif init == "ones":
        M = np.ones((k, k))
        diags = np.ones((r, c, k))
    elif init == "default":
        s = math.sqrt(6.0 / (k + k))
        M = make_rng(rng_seed).uniform(-s, s, size=(k, k))
        diags = np.ones((r, c, k))
    elif init == "normal":
        gen = make_rng(rng_seed)
        M = gen.standard_normal((k, k))
        diags = gen.standard_normal((r, c, k))
    else:
        raise ValueError(f"unknown init {init!r}")
    return VvmaParam(M, diags, diag_enabled=diag_enabled, m_scale=m_scale)


def blocks(p: VvmaParam) -> np.ndarray:
    """All expanded blocks as an (r, c, k, k) array."""
    return p.m_scale * (p.M[None, None, :, :] * p.effective_diags()[:, :, None, :])


def expand(p: VvmaParam) -> np.ndarray:
    """Dense (r*k) x (c*k) matrix represented by ``p``."""
    b = blocks(p)
    r, c, k, _ = b.shape
    return b.transpose(0, 2, 1, 3).reshape(r * k, c * k)


def matvec(p: VvmaParam, x) -> np.ndarray:
    """``expand(p) @ x`` without building the expansion.

    Accepts a vector of length c*k or a batch of shape (c*k, t).
    """
    x = np.asarray(x, dtype=np.float64)
    k, r, c = p.k, p.r, p.c
    if x.shape[0] != c * k or x.ndim not in (1, 2):
        raise ValueError(f"input has leading length {x.shape[0] if x.ndim else 0}, "
                         f"expected {c * k}")
    if x.ndim == 1:
        xb = x.reshape(c, k)
        # row block i: M @ sum_j (v_ij * x_j)
        z = np.einsum("ijk,jk->ik", p.effective_diags(), xb)
        y = z @ p.M.T
        return p.m_scale * y.reshape(r * k)
    t = x.shape[1]
    xb = x.reshape(c, k, t)
    z = np.einsum("ijk,jkt->ikt", p.effective_diags(), xb)
    y = np.einsum("ab,ibt->iat", p.M, z)
    return p.m_scale * y.reshape(r * k, t)


def param_count(p: VvmaParam) -> int:
    if p.diag_enabled:
        return p.k * p.k + p.r * p.c * p.k
    return p.k * p.k


def pad_shape(m: int, n: int, k: int) -> tuple[int, int]:
    """Block grid (rows, cols) covering an m x n matrix with k x k tiles."""
    _check_dims(m=m, n=n, k=k)
    return -(-m // k), -(-n // k)


def pad_matrix(W: np.ndarray, k: int) -> np.ndarray:
    """Zero-pad ``W`` up to the next multiple of ``k`` in both dimensions."""
    W = as_matrix(W, "W")
    r, c = pad_shape(W.shape[0], W.shape[1], k)
    if W.shape == (r * k, c * k):
        return W
    out = np.zeros((r * k, c * k))
    out[: W.shape[0], : W.shape[1]] = W
    return out
