"""Field containers and the critical-exponent bookkeeping.

Fields are thin immutable wrappers around ndarrays tied to a grid.  On a
torus the trailing axes are the grid shape (m,)*n; on a ball they are
(nr, n_angular).  Symmetric 2-tensors store only the upper triangle,
n(n+1)/2 components, in the row-major pair order (0,0), (0,1), ...,
(1,1), (1,2), ...; ``SYM_PAIRS[n]`` gives the index list.

Nothing here mutates: operations build new fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grids import SUPPORTED_DIMS, TorusGrid

SYM_PAIRS = {
    n: [(i, j) for i in range(n) for j in range(i, n)] for n in SUPPORTED_DIMS
}
SYM_INDEX = {n: {p: k for k, p in enumerate(SYM_PAIRS[n])} for n in SUPPORTED_DIMS}


def sym_size(n: int) -> int:
    return n * (n + 1) // 2


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SobolevExponents:
    """Dimensional constants of the conformal method, kept as exact rationals.

    q is the critical Sobolev exponent 2n/(n-2); cn the conformal-Laplacian
    normalisation (n-2)/(4(n-1)); alpha the lapse-trace weight (n-1)/n.
    """

    n: int

    def __post_init__(self):
        if self.n not in SUPPORTED_DIMS:
            raise ValueError(f"dimension outside supported range: {self.n}")

    @property
    def q(self) -> Fraction:
        return Fraction(2 * self.n, self.n - 2)

    @property
    def cn(self) -> Fraction:
        return Fraction(self.n - 2, 4 * (self.n - 1))

    @property
    def alpha(self) -> Fraction:
        return Fraction(self.n - 1, self.n)

    # float views, used everywhere in the numerics
    @property
    def qf(self) -> float:
        return float(self.q)

    @property
    def cnf(self) -> float:
        return float(self.cn)

    @property
    def alphaf(self) -> float:
        return float(self.alpha)


class _FieldBase:
    """Shared plumbing: grid compatibility and array access."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values, ncomp):
        values = np.asarray(values, dtype=float)
        lead = () if ncomp is None else (ncomp,)
        want = lead + grid.shape
        if values.shape != want:
            raise ValueError(
                f"field shape {values.shape} does not match grid {want}"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _freeze(values))

    def __setattr__(self, *_):
        raise AttributeError("fields are immutable; build a new one")

    @property
    def n(self) -> int:
        return self.grid.n


class ScalarField(_FieldBase):
    """Scalar sample on a grid."""

    __slots__ = ()

    def __init__(self, grid, values):
        super().__init__(grid, values, None)

    def replace(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


class VectorField(_FieldBase):
    """Vector field; leading axis is the Cartesian component."""

    __slots__ = ()

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        super().__init__(grid, values, grid.n)

    def component(self, i: int) -> np.ndarray:
        return self.values[i]

    def replace(self, values) -> "VectorField":
        return VectorField(self.grid, values)


class SymTensorField(_FieldBase):
    """Symmetric 2-tensor in upper-triangle storage.

    With trace_free=True the trace is checked against a 1e-10 sup bound
    (relative to the largest entry) at construction.
    """

    __slots__ = ("trace_free",)

    def __init__(self, grid, values, trace_free: bool = False):
        values = np.asarray(values, dtype=float)
        super().__init__(grid, values, sym_size(grid.n))
        object.__setattr__(self, "trace_free", bool(trace_free))
        if trace_free:
            tr = self.trace()
            scale = max(float(np.max(np.abs(values))), 1.0)
            worst = float(np.max(np.abs(tr)))
            if worst > 1e-10 * scale:
                raise ValueError(
                    f"tensor declared trace-free but sup|tr| = {worst:.3e}"
                )

    def entry(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self.values[SYM_INDEX[self.n][(i, j)]]

    def trace(self) -> np.ndarray:
        n = self.n
        return sum(self.entry(i, i) for i in range(n))

    def frobenius_sq(self) -> np.ndarray:
        """Pointwise |T|^2 = sum_ij T_ij^2 (off-diagonals counted twice)."""
        out = np.zeros(self.values.shape[1:])
        for k, (i, j) in enumerate(SYM_PAIRS[self.n]):
            w = 1.0 if i == j else 2.0
            out += w * self.values[k] ** 2
        return out

    def dot_vector(self, v: np.ndarray) -> np.ndarray:
        """(T v)_i = T_ij v_j; v has shape (n,) + grid.shape."""
        n = self.n
        out = np.zeros_like(v)
        for i in range(n):
            acc = np.zeros(v.shape[1:])
            for j in range(n):
                acc = acc + self.entry(i, j) * v[j]
            out[i] = acc
        return out

    def replace(self, values, trace_free=None) -> "SymTensorField":
        tf = self.trace_free if trace_free is None else trace_free
        return SymTensorField(self.grid, values, trace_free=tf)


def tensor_from_full(grid, full: np.ndarray, trace_free=False) -> SymTensorField:
    """Pack a full (n, n, ...) symmetric array into triangle storage."""
    n = grid.n
    comps = [full[i, j] for (i, j) in SYM_PAIRS[n]]
    return SymTensorField(grid, np.stack(comps), trace_free=trace_free)


# ---------------------------------------------------------------------------
# test-field factory
# ---------------------------------------------------------------------------


def random_band_limited(grid: TorusGrid, rng, kmax: int = 3, amp: float = 1.0,
                        positive_floor: float = None) -> np.ndarray:
    """Random real trigonometric polynomial with modes |k|_inf <= kmax.

    With positive_floor set, the result is shifted/scaled to stay above it
    (handy for conformal factors and solution iterates).
    """
    x = grid.coords()
    out = np.zeros(grid.shape)
    for _ in range(6):
        k = rng.integers(-kmax, kmax + 1, size=grid.n)
        if not np.any(k):
            continue
        phase = rng.uniform(0, 2 * np.pi)
        c = rng.normal() * amp / 6.0
        out += c * np.cos(2 * np.pi * np.tensordot(k, x, axes=1) / grid.L + phase)
    if positive_floor is not None:
        lo = float(out.min())
        out = out - lo + positive_floor
    return out
