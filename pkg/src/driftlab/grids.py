"""Structured grids: periodic tori and radial-spherical balls.

Two grid families cover everything the solvers and diagnostics need:

* ``TorusGrid`` — the flat torus [0, L)^n with a uniform tensor grid.  All
  calculus on it is spectral (FFT), so differential identities hold to
  machine precision for band-limited fields.

* ``BallGrid`` — B_0(R) in R^n sampled as a tensor product of a radial
  Gauss-Legendre rule (mapped to (0, R], no node at the origin) and an
  angular product rule on S^{n-1} whose weights sum to the exact sphere
  area.  Polar angles with odd sine powers in the surface measure use
  Gauss-Legendre in the cosine (the measure becomes polynomial, so the
  weight sum is exact); the sin^2 factor uses Gauss-Chebyshev of the
  second kind (uniform nodes in the angle, again exact weight sum).

Supported dimensions are n = 3, 4, 5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SUPPORTED_DIMS = (3, 4, 5)


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _check_dim(n: int) -> None:
    if n not in SUPPORTED_DIMS:
        raise ValueError(f"dimension outside theorem range 3..5: n={n}")


# ---------------------------------------------------------------------------
# torus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [0, L)^n with m points per axis.

    m must be even and at least 8; axes are indexed row-major, so a scalar
    field is an ndarray of shape (m,)*n.
    """

    n: int
    m: int
    L: float = 1.0

    def __post_init__(self):
        _check_dim(self.n)
        if self.m < 8 or self.m % 2 != 0:
            raise ValueError(f"torus grid needs m >= 8 and even, got m={self.m}")
        if not self.L > 0:
            raise ValueError("cell length must be positive")

    # shape helpers -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def n_nodes(self) -> int:
        return self.m ** self.n

    @property
    def h(self) -> float:
        return self.L / self.m

    @property
    def cell_volume(self) -> float:
        return (self.L / self.m) ** self.n

    def axis(self) -> np.ndarray:
        """1-d coordinate array, shared by all axes."""
        return np.arange(self.m) * (self.L / self.m)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (n,) + shape."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"))

    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers 2*pi*k/L per axis, shape (n,) + shape."""
        k1 = 2.0 * np.pi * np.fft.fftfreq(self.m, d=self.L / self.m)
        return np.stack(np.meshgrid(*([k1] * self.n), indexing="ij"))

    def integrate(self, values: np.ndarray) -> float:
        """Volume integral of nodal values (trapezoid = exact on the torus)."""
        return float(np.sum(values) * self.cell_volume)

    def is_compatible(self, values: np.ndarray) -> bool:
        return values.shape[-self.n:] == self.shape


# ---------------------------------------------------------------------------
# angular rules on S^{n-1}
# ---------------------------------------------------------------------------


def _polar_rule(sin_power: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature for int_0^pi f(a) sin(a)^p da, nodes returned in the angle a.

    Odd p: substitute t = cos(a); the measure (1-t^2)^{p//2} dt is polynomial
    and Gauss-Legendre integrates it exactly.  p = 2: Gauss-Chebyshev (2nd
    kind), nodes uniform in a, weight sum pi/2 exact.
    """
    if sin_power % 2 == 1:
        t, w = np.polynomial.legendre.leggauss(m)
        order = np.argsort(np.arccos(t))
        t, w = t[order], w[order]
        ang = np.arccos(t)
        wts = w * (1.0 - t * t) ** (sin_power // 2)
        return ang, wts
    if sin_power == 2:
        j = np.arange(1, m + 1)
        ang = j * np.pi / (m + 1)
        wts = (np.pi / (m + 1)) * np.sin(ang) ** 2
        return ang, wts
    raise ValueError(f"unsupported sine power {sin_power}")


def _build_angular(n: int, orders: tuple[int, ...]):
    """Product angular rule on S^{n-1}.

    Returns (angle node arrays, weight arrays, node angles per point,
    unit vectors, combined weights).  orders has n-1 entries: the polar
    angles (highest sine power first) then the azimuth.
    """
    polar_powers = list(range(n - 2, 0, -1))  # e.g. n=5 -> [3, 2, 1]
    axes, wts = [], []
    for p, m in zip(polar_powers, orders[:-1]):
        a, w = _polar_rule(p, m)
        axes.append(a)
        wts.append(w)
    m_phi = orders[-1]
    phi = np.arange(m_phi) * (2.0 * np.pi / m_phi)
    axes.append(phi)
    wts.append(np.full(m_phi, 2.0 * np.pi / m_phi))

    mesh = np.meshgrid(*axes, indexing="ij")
    angles = np.stack([a.ravel() for a in mesh], axis=-1)  # (n_ang, n-1)
    weight = wts[0]
    for w in wts[1:]:
        weight = np.multiply.outer(weight, w)
    weight = weight.ravel()

    # unit vectors: omega_1 = cos a1, omega_2 = sin a1 cos a2, ...
    n_ang = angles.shape[0]
    omega = np.empty((n_ang, n))
    sin_prod = np.ones(n_ang)
    for k in range(n - 1):
        omega[:, k] = sin_prod * np.cos(angles[:, k])
        sin_prod = sin_prod * np.sin(angles[:, k])
    omega[:, n - 1] = sin_prod
    return axes, wts, angles, omega, weight


_DEFAULT_ANGULAR = {3: (24, 48), 4: (20, 20, 40), 5: (14, 14, 14, 28)}


@dataclass(frozen=True)
class BallGrid:
    """Tensor product grid on the ball B_0(R) in R^n.

    Radial nodes are Gauss-Legendre points mapped to (0, R]; fields are
    stored as arrays of shape (nr, n_angular).  Angular weights sum to the
    sphere area |S^{n-1}| to machine precision by construction, and radial
    weights integrate r^{n-1} dr so that ``integrate`` is a volume integral.
    """

    n: int
    R: float
    nr: int
    angular_orders: tuple[int, ...] = None  # type: ignore[assignment]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        _check_dim(self.n)
        if not self.R > 0:
            raise ValueError("ball radius must be positive")
        if self.nr < 4:
            raise ValueError("need at least 4 radial nodes")
        if self.angular_orders is None:
            object.__setattr__(self, "angular_orders", _DEFAULT_ANGULAR[self.n])
        object.__setattr__(self, "angular_orders", tuple(self.angular_orders))
        if len(self.angular_orders) != self.n - 1:
            raise ValueError(
                f"angular_orders needs {self.n - 1} entries for n={self.n}"
            )
        t, w = np.polynomial.legendre.leggauss(self.nr)
        r = 0.5 * self.R * (t + 1.0)
        wr = 0.5 * self.R * w * r ** (self.n - 1)
        axes, wts, angles, omega, wa = _build_angular(self.n, self.angular_orders)
        c = self._cache
        c["r"] = r
        c["wr"] = wr
        c["ang_axes"] = axes
        c["ang_wts"] = wts
        c["angles"] = angles
        c["omega"] = omega
        c["wa"] = wa
        for a in (r, wr, angles, omega, wa):
            a.setflags(write=False)

    # geometry ----------------------------------------------------------

    @property
    def r(self) -> np.ndarray:
        """Radial nodes, strictly increasing, first node > 0."""
        return self._cache["r"]

    @property
    def radial_weights(self) -> np.ndarray:
        """Weights for int_0^R f(r) r^{n-1} dr."""
        return self._cache["wr"]

    @property
    def omega(self) -> np.ndarray:
        """Unit vectors on S^{n-1}, shape (n_angular, n)."""
        return self._cache["omega"]

    @property
    def angular_weights(self) -> np.ndarray:
        """Surface weights, sum = |S^{n-1}|."""
        return self._cache["wa"]

    @property
    def angle_axes(self) -> list[np.ndarray]:
        return self._cache["ang_axes"]

    @property
    def angles(self) -> np.ndarray:
        return self._cache["angles"]

    @property
    def n_angular(self) -> int:
        return self.omega.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nr, self.n_angular)

    @property
    def n_nodes(self) -> int:
        return self.nr * self.n_angular

    @property
    def angular_shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.angle_axes)

    def points(self) -> np.ndarray:
        """Cartesian node positions, shape (nr, n_angular, n)."""
        key = "points"
        if key not in self._cache:
            pts = self.r[:, None, None] * self.omega[None, :, :]
            pts.setflags(write=False)
            self._cache[key] = pts
        return self._cache[key]

    def radii(self) -> np.ndarray:
        """|x| at every node, shape (nr, n_angular)."""
        return np.broadcast_to(self.r[:, None], self.shape)

    # quadrature ---------------------------------------------------------

    def integrate(self, values: np.ndarray) -> float:
        """Volume integral over the ball."""
        return float(self.radial_weights @ (values @ self.angular_weights))

    def surface_integrate(self, ring_values: np.ndarray, radius: float) -> float:
        """Surface integral over the sphere of given radius.

        ring_values holds the integrand sampled at the angular nodes.
        """
        return float(ring_values @ self.angular_weights) * radius ** (self.n - 1)

    def is_compatible(self, values: np.ndarray) -> bool:
        return values.shape[-2:] == self.shape


def grids_match(a, b) -> bool:
    """Same-geometry check used by the calculus layer."""
    return a is b or a == b
