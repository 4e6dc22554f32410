"""Dense tensor containers and contraction kernels with hand-derived gradients.

Matrices are plain float64 numpy arrays (row-major, shape ``(rows, cols)``).
The two container classes below hold the 3-D generator tensor that maps a
meta vector to a weight matrix, either fully materialized or factorized as a
sum of rank-one outer products. All operations are pure functions: results
are freshly allocated and inputs are never aliased, so they are safe to call
from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeMismatchError


def as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class FusionTensor:
    """3-D tensor of shape p x q x z, stored slice-major over the depth axis.

    ``data`` has numpy shape (z, p, q): data[z] is the z-th frontal slice.
    The depth z must equal the meta-vector length of the model using it.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", as_f64(self.data))
        if self.data.ndim != 3:
            raise ShapeMismatchError("FusionTensor", "3-D array (z,p,q)", self.data.shape)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("FusionTensor holds non-finite values")

    @property
    def z(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def q(self) -> int:
        return self.data.shape[2]

    def param_count(self) -> int:
        return self.p * self.q * self.z

    @classmethod
    def zeros(cls, p: int, q: int, z: int) -> "FusionTensor":
        return cls(np.zeros((z, p, q)))


@dataclass(frozen=True)
class CpTensor:
    """Rank-r factorization of a p x q x z tensor: sum_r a_r (o) b_r (o) c_r.

    Factor matrices: a (p,r), b (q,r), c (z,r). Entrywise the materialized
    tensor is t[p,q,z] = sum_r a[p,r] b[q,r] c[z,r].
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            arr = as_f64(getattr(self, name))
            object.__setattr__(self, name, arr)
            if arr.ndim != 2:
                raise ShapeMismatchError(f"CpTensor.{name}", "2-D factor matrix", arr.shape)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"CpTensor.{name} holds non-finite values")
        ranks = {self.a.shape[1], self.b.shape[1], self.c.shape[1]}
        if len(ranks) != 1:
            raise ShapeMismatchError(
                "CpTensor", "equal factor column counts",
                (self.a.shape, self.b.shape, self.c.shape),
            )
        if self.rank < 1:
            raise ShapeMismatchError("CpTensor", "rank >= 1", self.rank)

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def p(self) -> int:
        return self.a.shape[0]

    @property
    def q(self) -> int:
        return self.b.shape[0]

    @property
    def z(self) -> int:
        return self.c.shape[0]

    def param_count(self) -> int:
        return self.rank * (self.p + self.q + self.z)

    def materialize(self) -> FusionTensor:
        """Expand the factorization into the full (z,p,q) tensor."""
        return FusionTensor(np.einsum("pr,qr,zr->zpq", self.a, self.b, self.c))


def _check_meta(op: str, z: int, s: np.ndarray) -> np.ndarray:
    s = as_f64(s)
    if s.ndim != 1 or s.shape[0] != z:
        raise ShapeMismatchError(op, f"meta vector of length {z}", s.shape)
    return s


def mode3_contract(t: FusionTensor, s) -> np.ndarray:
    """Multiply t by s along the depth axis: out[p,q] = sum_z t[p,q,z] s[z]."""
    s = _check_meta("mode3_contract", t.z, s)
    return _kernels.mode3_contract(t.data, s)


def mode3_contract_backward(t: FusionTensor, s, g) -> Tuple[FusionTensor, np.ndarray]:
    """Gradients of <g, mode3_contract(t,s)>: dt[p,q,z] = g[p,q] s[z], ds[z] = <g, t[:,:,z]>."""
    s = _check_meta("mode3_contract_backward", t.z, s)
    g = as_f64(g)
    if g.shape != (t.p, t.q):
        raise ShapeMismatchError("mode3_contract_backward", (t.p, t.q), g.shape)
    dt, ds = _kernels.mode3_contract_backward(t.data, s, g)
    return FusionTensor(dt), ds


def cp_contract(t: CpTensor, s) -> np.ndarray:
    """Contract the factorized tensor with s: A diag(C^T s) B^T."""
    s = _check_meta("cp_contract", t.z, s)
    return _kernels.cp_contract(t.a, t.b, t.c, s)


def cp_contract_backward(t: CpTensor, s, g):
    """Gradients of <g, cp_contract(t,s)> w.r.t. (a, b, c, s)."""
    s = _check_meta("cp_contract_backward", t.z, s)
    g = as_f64(g)
    if g.shape != (t.p, t.q):
        raise ShapeMismatchError("cp_contract_backward", (t.p, t.q), g.shape)
    return _kernels.cp_contract_backward(t.a, t.b, t.c, s, g)


def finite_diff_check(
    f: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0,
    step: float = 1e-5,
) -> float:
    """Max relative error between f's analytic gradient and central differences.

    ``f`` maps a flat parameter vector to ``(value, gradient)``. For each
    coordinate the central difference (f(x+h)-f(x-h))/2h is compared against
    the analytic gradient; the error is |analytic - numeric| / max(1, |analytic|)
    and the worst coordinate is returned.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x0 = as_f64(x0).ravel()
    _, grad = f(x0)
    grad = as_f64(grad).ravel()
    if grad.shape != x0.shape:
        raise ShapeMismatchError("finite_diff_check", x0.shape, grad.shape)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("analytic gradient is non-finite")
    worst = 0.0
    for k in range(x0.size):
        xp = x0.copy()
        xp[k] += step
        xm = x0.copy()
        xm[k] -= step
        fp, _ = f(xp)
        fm, _ = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f evaluated non-finite near coordinate {k}")
        numeric = (fp - fm) / (2.0 * step)
        err = abs(grad[k] - numeric) / max(1.0, abs(grad[k]))
        worst = max(worst, err)
    return worst
