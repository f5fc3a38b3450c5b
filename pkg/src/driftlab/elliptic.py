"""Linear elliptic machinery: periodic inversion, Green kernels, Neumann forms.

Periodic solvers work in Fourier space.  For Delta + h with variable h the
constant-coefficient inverse (|k|^2 + mean h)^{-1} preconditions GMRES, and
a round of iterative refinement pushes the residual to the 1e-10 contract.
The vector Laplacian is inverted mode by mode: on a torus its kernel is the
constant fields (rotation/dilation generators are not periodic), so sources
must be mean-free and the solution is gauge-fixed to zero mean.

On balls: the scalar kernel with its 3R offset, the closed-form fundamental
matrix of the vector operator, and discrete Neumann Green 1-forms.  The
Green forms are built modally: the deformation form a(X,Y) = 1/2 int <LX,LY>
is diagonalised over a polynomial vector basis (exact moment integrals, no
grid quadrature in the assembly), giving

    G(x, y) = sum_m  e_m(x) e_m(y)^T / lambda_m     (lambda_m > 0)

with the zero modes spanning exactly the conformal Killing fields, onto
which pi_R projects.  The representation identity

    X - pi_R X = int <G(x,.), vec-Delta X> + oint <(L X) nu, G(x,.)>

is then algebraically exact on the polynomial span, and reciprocity
G(x,y) = G(y,x)^T holds by construction.  Everything downstream collapses
mode sums into a single coefficient vector before touching grid nodes, so
memory stays proportional to (basis size) x (nodes), not (modes) x (nodes).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy import linalg as sla
from scipy.sparse.linalg import LinearOperator, lgmres

from . import calculus as ca
from .fields import SYM_INDEX, SYM_PAIRS, ScalarField, VectorField, \
    random_band_limited
from .grids import BallGrid, TorusGrid, sphere_area

__all__ = [
    "solve_scalar_periodic",
    "solve_lame_periodic",
    "green_scalar_eval",
    "lame_fundamental_eval",
    "lame_green_matrix",
    "neumann_green_build",
    "representation_check",
    "NeumannGreenForms",
]


# ---------------------------------------------------------------------------
# periodic scalar solve
# ---------------------------------------------------------------------------


def _coercivity_screen(h: ScalarField, n_probes: int = 32) -> float:
    """Smallest Rayleigh quotient of Delta + h over random probes + constant."""
    g = h.grid
    rng = np.random.default_rng(1618)
    worst = np.inf
    hv = h.values
    for trial in range(n_probes + 1):
        if trial == 0:
            v = np.ones(g.shape)
        else:
            v = random_band_limited(g, rng, kmax=3)
            if np.max(np.abs(v)) < 1e-12:
                continue
        grad2 = np.sum(ca.t_grad(v, g) ** 2, axis=0)
        num = g.integrate(grad2 + hv * v * v)
        den = g.integrate(v * v)
        worst = min(worst, num / den)
    return worst


def solve_scalar_periodic(h: ScalarField, rhs: ScalarField,
                          rtol: float = 1e-10) -> ScalarField:
    """Solve (Delta + h) u = rhs on the torus.

    Raises if the coercivity screen fails or the iteration stalls above
    the residual contract rtol * ||rhs||.
    """
    g = h.grid
    if g != rhs.grid:
        raise ValueError("h and rhs live on different grids")
    worst = _coercivity_screen(h)
    if worst <= 0:
        raise ValueError(
            f"Delta + h fails the coercivity screen (Rayleigh {worst:.3e})")
    _, k2 = ca._torus_spectral(g)
    hbar = float(np.mean(h.values))
    shift = max(hbar, 1e-8)
    hv = h.values

    def apply_op(u_flat):
        u = u_flat.reshape(g.shape)
        return (ca.t_laplace(u, g) + hv * u).ravel()

    def precond(r_flat):
        r = r_flat.reshape(g.shape)
        return np.fft.irfftn(np.fft.rfftn(r) / (k2 + shift),
                             s=g.shape, axes=range(g.n)).ravel()

    A = LinearOperator((g.n_nodes, g.n_nodes), matvec=apply_op)
    M = LinearOperator((g.n_nodes, g.n_nodes), matvec=precond)
    b = rhs.values.ravel()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return ScalarField(g, np.zeros(g.shape))
    u, _ = lgmres(A, b, M=M, rtol=1e-12, atol=1e-13 * bnorm, maxiter=400)
    # iterative refinement mops up what the Krylov tolerance left behind
    for _ in range(3):
        r = b - apply_op(u)
        if np.linalg.norm(r) <= 0.1 * rtol * bnorm:
            break
        du, _ = lgmres(A, r, M=M, rtol=1e-10, atol=0.0, maxiter=200)
        u = u + du
    res = np.linalg.norm(b - apply_op(u))
    if res > rtol * bnorm:
        raise RuntimeError(
            f"periodic scalar solve stalled: residual {res:.3e} "
            f"> {rtol:.1e} * ||rhs||")
    return ScalarField(g, u.reshape(g.shape))


# ---------------------------------------------------------------------------
# periodic vector solve
# ---------------------------------------------------------------------------


def solve_lame_periodic(rhs: VectorField) -> VectorField:
    """Invert the vector Laplacian on the torus, gauge-fixed to zero mean.

    The symbol |k|^2 a + (1 - 2/n)(k.a) k inverts to
    (a - ((n-2)/(2n-2)) (khat.a) khat) / |k|^2 for k != 0; constants span
    the kernel, so a constant component of the source is inadmissible.
    """
    g = rhs.grid
    n = g.n
    means = np.array([np.mean(rhs.values[i]) for i in range(n)])
    scale = max(float(np.max(np.abs(rhs.values))), 1e-300)
    fluct = float(np.max(np.abs(rhs.values - means.reshape((n,) + (1,) * n))))
    if fluct <= 1e-14 * scale and np.max(np.abs(means)) > 0:
        raise ValueError("kernel-incompatible source: constant vector field")
    if np.max(np.abs(means)) > 1e-10 * max(1.0, scale):
        warnings.warn("source mean projected out (vector Laplacian kernel)",
                      stacklevel=2)
    ks, k2 = ca._torus_spectral(g)
    rhat = np.stack([np.fft.rfftn(rhs.values[i] - means[i]) for i in range(n)])
    kdot = sum(ks[i] * rhat[i] for i in range(n))
    k2safe = np.where(k2 == 0, 1.0, k2)
    frac = (n - 2) / (2 * n - 2)
    what = np.empty_like(rhat)
    for i in range(n):
        what[i] = (rhat[i] - frac * kdot * ks[i] / k2safe) / k2safe
        what[i] = np.where(k2 == 0, 0.0, what[i])
    out = np.stack([np.fft.irfftn(what[i], s=g.shape, axes=range(n))
                    for i in range(n)])
    return VectorField(g, out)


# ---------------------------------------------------------------------------
# closed-form kernels
# ---------------------------------------------------------------------------


def green_scalar_eval(x, y, R: float) -> float:
    """Scalar ball kernel ((n-2) w_{n-1})^{-1} (|x-y|^{2-n} - (3R)^{2-n}).

    Vanishes exactly at separation 3R; positive inside.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    d = float(np.linalg.norm(x - y))
    if d == 0.0:
        raise ValueError("coincident points")
    c = 1.0 / ((n - 2) * sphere_area(n))
    return c * (d ** (2 - n) - (3 * R) ** (2 - n))


def lame_fundamental_eval(y) -> np.ndarray:
    """Closed-form fundamental matrix of the vector Laplacian.

    G_i(y)_j = -(1/(4(n-1) w_{n-1})) |y|^{2-n}
               ((3n-2) d_ij + (n-2) y_i y_j / |y|^2).

    This is the classical display; the operator annihilates it away from
    the origin only in three dimensions.  For the kernel that inverts the
    operator in every supported dimension see lame_green_matrix.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    r = float(np.linalg.norm(y))
    if r == 0.0:
        raise ValueError("fundamental matrix is singular at the origin")
    c = -1.0 / (4 * (n - 1) * sphere_area(n))
    return c * r ** (2 - n) * ((3 * n - 2) * np.eye(n)
                               + (n - 2) * np.outer(y, y) / r ** 2)


def lame_green_matrix(y) -> np.ndarray:
    """Fundamental solution E with vec-Delta E = delta I in all dimensions.

    E(y) = (1/(4(n-1)(n-2) w_{n-1})) |y|^{2-n}
           ((3n-2) d_ij + (n-2)^2 y_i y_j / |y|^2);
    at n = 3 this is the negative of lame_fundamental_eval.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    r = float(np.linalg.norm(y))
    if r == 0.0:
        raise ValueError("fundamental matrix is singular at the origin")
    c = 1.0 / (4 * (n - 1) * (n - 2) * sphere_area(n))
    return c * r ** (2 - n) * ((3 * n - 2) * np.eye(n)
                               + (n - 2) ** 2 * np.outer(y, y) / r ** 2)


# ---------------------------------------------------------------------------
# polynomial vector basis on the ball
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _monomials(n: int, degree: int) -> tuple:
    """All exponent tuples with |beta| <= degree."""
    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n), d):
            beta = [0] * n
            for c in combo:
                beta[c] += 1
            out.append(tuple(beta))
    return tuple(out)


@lru_cache(maxsize=200000)
def _ball_monomial_integral(gamma: tuple, R: float) -> float:
    """Exact int_{B_R} x^gamma dx (zero unless every exponent is even)."""
    if any(g % 2 for g in gamma):
        return 0.0
    n = len(gamma)
    s = sum(gamma)
    ang = 2.0
    for g in gamma:
        ang *= math.gamma((g + 1) / 2.0)
    ang /= math.gamma((s + n) / 2.0)
    return ang * R ** (s + n) / (s + n)


def _lame_of_monomial(beta: tuple, i: int, n: int) -> dict:
    """L(x^beta e_i) as {(j, k, exponent): coeff} on the upper triangle."""
    out: dict = {}

    def deriv(b, j):
        if b[j] == 0:
            return None, 0.0
        nb = list(b)
        nb[j] -= 1
        return tuple(nb), float(b[j])

    def add(j, k, expo, coef):
        if expo is None or coef == 0.0:
            return
        key = (j, k, expo)
        out[key] = out.get(key, 0.0) + coef

    for j in range(n):
        for k in range(j, n):
            if k == i:
                e, c = deriv(beta, j)
                add(j, k, e, c)
            if j == i:
                e, c = deriv(beta, k)
                add(j, k, e, c)
            if j == k:
                e, c = deriv(beta, i)
                add(j, k, e, -2.0 * c / n)
    return out


def _pair_form_integral(la: dict, lb: dict, R: float) -> float:
    """1/2 int <L p, L q> from monomial expansions of the two deformations."""
    acc = 0.0
    for (j1, k1, e1), c1 in la.items():
        for (j2, k2, e2), c2 in lb.items():
            if (j1, k1) != (j2, k2):
                continue
            w = 1.0 if j1 == k1 else 2.0
            expo = tuple(a + b for a, b in zip(e1, e2))
            acc += w * c1 * c2 * _ball_monomial_integral(expo, R)
    return 0.5 * acc


def _eval_monomials(expos, pts: np.ndarray) -> np.ndarray:
    """Monomial values at points (..., n) -> (n_monomials, ...)."""
    out = np.empty((len(expos),) + pts.shape[:-1])
    for a, beta in enumerate(expos):
        acc = np.ones(pts.shape[:-1])
        for j, b in enumerate(beta):
            if b:
                acc = acc * pts[..., j] ** b
        out[a] = acc
    return out


def _eval_monomial_derivs(expos, pts: np.ndarray) -> np.ndarray:
    """d_j of each monomial at points (..., n) -> (n, n_monomials, ...)."""
    n = pts.shape[-1]
    out = np.empty((n, len(expos)) + pts.shape[:-1])
    for j in range(n):
        for a, beta in enumerate(expos):
            if beta[j] == 0:
                out[j, a] = 0.0
                continue
            acc = float(beta[j]) * np.ones(pts.shape[:-1])
            for jj, b in enumerate(beta):
                bb = b - 1 if jj == j else b
                if bb:
                    acc = acc * pts[..., jj] ** bb
            out[j, a] = acc
    return out


_DEFAULT_DEGREE = {3: 8, 4: 5, 5: 4}


@dataclass(frozen=True)
class NeumannGreenForms:
    """Discrete Neumann Green 1-forms on a ball, stored modally.

    coef_modes holds the positive eigenfields of the deformation form as
    monomial coefficient arrays (M, n, n_monomials), L2-orthonormal on the
    ball; lam their eigenvalues; coef_kernel the zero modes (the conformal
    Killing fields).  G(x,y) = sum_m e_m(x) e_m(y)^T / lam_m.
    """

    grid: BallGrid
    degree: int
    expos: tuple
    coef_modes: np.ndarray
    lam: np.ndarray
    coef_kernel: np.ndarray

    @property
    def n_modes(self) -> int:
        return len(self.lam)

    @property
    def kernel_dim(self) -> int:
        return self.coef_kernel.shape[0]

    # ----- pointwise evaluation --------------------------------------------

    def _fields_at(self, coef: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Evaluate coefficient rows at points (..., n) -> (rows, ..., n)."""
        mono = _eval_monomials(self.expos, pts)
        return np.einsum("rib,b...->r...i", coef, mono)

    def kernel_eval_batch(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """G(x_p, y_p) for paired point batches, shape (P, n, n)."""
        ex = self._fields_at(self.coef_modes, np.atleast_2d(X))
        ey = self._fields_at(self.coef_modes, np.atleast_2d(Y))
        return np.einsum("mpi,mpj,m->pij", ex, ey, 1.0 / self.lam)

    def kernel_eval(self, x, y) -> np.ndarray:
        """G(x, y) as an n x n matrix."""
        return self.kernel_eval_batch(np.asarray(x, float)[None],
                                      np.asarray(y, float)[None])[0]

    def kernel_grad_x(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """d/dx_k G(x,y)_ij on paired batches, shape (P, k, i, j) (exact)."""
        X = np.atleast_2d(np.asarray(X, float))
        Y = np.atleast_2d(np.asarray(Y, float))
        dmono = _eval_monomial_derivs(self.expos, X)  # (n, nb, P)
        ey = self._fields_at(self.coef_modes, Y)      # (M, P, n)
        dex = np.einsum("mib,kbp->mpki", self.coef_modes, dmono)
        return np.einsum("mpki,mpj,m->pkij", dex, ey, 1.0 / self.lam)

    # ----- projection onto conformal Killing fields ------------------------

    def kernel_fields(self) -> np.ndarray:
        """Conformal Killing basis on the grid, (K, n) + grid.shape."""
        g = self.grid
        vals = self._fields_at(self.coef_kernel, g.points())
        return np.moveaxis(vals, -1, 1)  # (K, n, nr, n_ang)

    def project(self, W: VectorField) -> VectorField:
        """L2-orthogonal projection onto the conformal Killing fields."""
        g = self.grid
        kf = self.kernel_fields()
        wvol = np.multiply.outer(g.radial_weights, g.angular_weights)
        c = np.einsum("kcxy,cxy,xy->k", kf, W.values, wvol)
        return VectorField(g, np.einsum("k,kcxy->cxy", c, kf))

    # ----- representation identity -----------------------------------------

    def representation_defect(self, W: VectorField,
                              compare: str = "lame") -> tuple:
        """Reconstruct W from its source through the Green forms.

        Returns (max pointwise defect, boundary-functional magnitude).
        compare='lame' checks the deformation of the reconstruction against
        L W (insensitive to the Killing gauge); compare='field' checks the
        reconstruction against W - pi_R W.
        """
        g = self.grid
        if W.grid != g:
            raise ValueError("field lives on a different grid")
        n = g.n
        nb = len(self.expos)
        dW = ca.lame_apply(W)
        LW = ca.conformal_killing(W)
        pts = g.points()
        mono = _eval_monomials(self.expos, pts)        # (nb, nr, n_ang)
        wvol = np.multiply.outer(g.radial_weights, g.angular_weights)
        vol = np.einsum("bxy,ixy,xy->ib", mono, dW.values, wvol)

        # boundary ring at r = R: one-sided interpolation of (L W) nu
        lo, wr = ca.interp_weights(g.r, g.R)
        ring_LW = np.einsum("r,sra->sa", wr, LW.values[:, lo:lo + len(wr)])
        nu = g.omega.T  # (n, n_ang)
        tractions = np.empty((n, g.n_angular))
        for i in range(n):
            acc = np.zeros(g.n_angular)
            for j in range(n):
                acc += ring_LW[SYM_INDEX[n][(min(i, j), max(i, j))]] * nu[j]
            tractions[i] = acc
        ring_pts = g.R * g.omega  # (n_ang, n)
        mono_ring = _eval_monomials(self.expos, ring_pts)  # (nb, n_ang)
        bnd = np.einsum("ba,ia,a->ib", mono_ring, tractions,
                        g.angular_weights) * g.R ** (n - 1)

        cm = np.einsum("mib,ib->m", self.coef_modes, vol + bnd) / self.lam
        bnd_mag = float(np.max(np.abs(
            np.einsum("mib,ib->m", self.coef_modes, bnd))))
        w_coef = np.einsum("m,mib->ib", cm, self.coef_modes)  # (n, nb)

        if compare == "lame":
            dmono = _eval_monomial_derivs(self.expos, pts)  # (n, nb, nr, na)
            dWrec = np.einsum("cb,jbxy->jcxy", w_coef, dmono)
            div = sum(dWrec[j, j] for j in range(n))
            defect = 0.0
            for s_idx, (i, j) in enumerate(SYM_PAIRS[n]):
                entry = dWrec[j, i] + dWrec[i, j]
                if i == j:
                    entry = entry - (2.0 / n) * div
                defect = max(defect,
                             float(np.max(np.abs(entry - LW.values[s_idx]))))
        elif compare == "field":
            rec = np.einsum("cb,bxy->cxy", w_coef, mono)
            target = W.values - self.project(W).values
            defect = float(np.max(np.abs(rec - target)))
        else:
            raise ValueError(f"unknown comparison: {compare}")
        return defect, bnd_mag

    # ----- kernel bound ------------------------------------------------------

    def kernel_bound_constant(self, delta: float, n_samples: int = 160,
                              seed: int = 4) -> float:
        """Measured C with |x-y| |grad G| + |G| <= C |x-y|^{2-n}.

        Sampled over pairs in the concentric half-radius ball separated by
        at least delta; monotone non-increasing in delta by construction.
        """
        g = self.grid
        n = g.n
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-0.5 * g.R, 0.5 * g.R, size=(4 * n_samples, 2, n))
        keep = (np.linalg.norm(pts[:, 0], axis=1) <= 0.5 * g.R) \
            & (np.linalg.norm(pts[:, 1], axis=1) <= 0.5 * g.R) \
            & (np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1) >= delta)
        pts = pts[keep][:n_samples]
        if len(pts) == 0:
            raise ValueError("no admissible pairs at this separation")
        X, Y = pts[:, 0], pts[:, 1]
        d = np.linalg.norm(X - Y, axis=1)
        Gv = np.max(np.abs(self.kernel_eval_batch(X, Y)), axis=(1, 2))
        dG = np.max(np.abs(self.kernel_grad_x(X, Y)), axis=(1, 2, 3))
        return float(np.max((d * dG + Gv) * d ** (n - 2)))


_GREEN_CACHE: dict = {}


def neumann_green_build(grid: BallGrid,
                        degree: int = None) -> NeumannGreenForms:
    """Diagonalise the deformation form over polynomial vector fields.

    Zero modes span the conformal Killing fields of the ball — dimension
    (n+1)(n+2)/2 — and the positive modes assemble the Green forms.  The
    eigenproblem uses exact moment integrals, so the modal data depends
    only on (n, R, degree) and is cached across grids.
    """
    n = grid.n
    if degree is None:
        degree = _DEFAULT_DEGREE[n]
    key = (n, grid.R, degree)
    cached = _GREEN_CACHE.get(key)
    if cached is None:
        expos = _monomials(n, degree)
        nb = len(expos)
        total = n * nb
        Gm = np.zeros((nb, nb))
        for a in range(nb):
            for b in range(a, nb):
                expo = tuple(p + q for p, q in zip(expos[a], expos[b]))
                Gm[a, b] = Gm[b, a] = _ball_monomial_integral(expo, grid.R)
        M = np.kron(np.eye(n), Gm)
        lames = [_lame_of_monomial(expos[a], i, n)
                 for i in range(n) for a in range(nb)]
        A = np.zeros((total, total))
        for p in range(total):
            lp = lames[p]
            for q in range(p, total):
                A[p, q] = A[q, p] = _pair_form_integral(lp, lames[q], grid.R)
        # whiten the Gram, then an ordinary symmetric eigenproblem
        s, U = sla.eigh(M)
        keep = s > 1e-13 * s[-1]
        if not np.all(keep):
            warnings.warn(
                f"monomial basis numerically rank-deficient: dropped "
                f"{int(np.sum(~keep))} directions", stacklevel=2)
        Wt = U[:, keep] / np.sqrt(s[keep])
        lam, V = sla.eigh(Wt.T @ A @ Wt)
        rows = (Wt @ V).T
        zero = lam <= 1e-9 * max(float(lam[-1]), 1.0)
        cached = (expos,
                  rows[~zero].reshape(-1, n, nb),
                  np.asarray(lam[~zero], dtype=float),
                  rows[zero].reshape(-1, n, nb))
        _GREEN_CACHE[key] = cached
    expos, coef_modes, lam, coef_kernel = cached

    expect = (n + 1) * (n + 2) // 2
    if coef_kernel.shape[0] != expect:
        raise RuntimeError(
            f"conformal Killing kernel dimension {coef_kernel.shape[0]}, "
            f"expected {expect}: degenerate modal system")
    return NeumannGreenForms(grid=grid, degree=degree, expos=expos,
                             coef_modes=coef_modes, lam=lam,
                             coef_kernel=coef_kernel)


# ---------------------------------------------------------------------------
# representation checks
# ---------------------------------------------------------------------------


def representation_check(field, which: str, forms: NeumannGreenForms = None,
                         n_points: int = 5, seed: int = 12) -> float:
    """Evaluate a Green representation and return the max pointwise defect.

    which='scalar': ball identity u(x) = mean_{S_x(rho)} u
    + int_{B_x(rho)} G (Delta u) with rho filling the room to the boundary
    (the kernel offset makes G vanish on the matched sphere).
    which='lame': Neumann-form identity compared on L W; forms are built
    on demand when not supplied.
    """
    if which == "scalar":
        u = field
        g = u.grid
        if not isinstance(g, BallGrid):
            raise ValueError("unsupported domain for the scalar identity")
        n = g.n
        lap = ScalarField(g, ca.b_laplace(u.values, g))
        rng = np.random.default_rng(seed)
        worst = 0.0
        centers = [np.zeros(n)]
        for _ in range(n_points - 1):
            v = rng.normal(size=n)
            centers.append(0.3 * g.R * rng.uniform(0.3, 1.0)
                           * v / np.linalg.norm(v))
        for x in centers:
            rho = 0.9 * (g.R - float(np.linalg.norm(x)))
            avg = ca.sphere_average(u, x, rho)
            c = 1.0 / ((n - 2) * sphere_area(n))
            bulk = c * (ca.newton_kernel_integral(lap, x, rho, 2 - n)
                        - rho ** (2 - n)
                        * ca.newton_kernel_integral(lap, x, rho, 0))
            if np.linalg.norm(x) < 1e-14:
                ux = ca.ball_center_value(u.values, g)
            else:
                ux = float(ca.ball_sample(u.values, g, x[None, :])[0])
            worst = max(worst, abs(ux - avg - bulk))
        return worst
    if which == "lame":
        W = field
        if not isinstance(W.grid, BallGrid):
            raise ValueError("unsupported domain for the Neumann identity")
        if forms is None:
            forms = neumann_green_build(W.grid)
        defect, _ = forms.representation_defect(W, compare="lame")
        return defect
    raise ValueError(f"unknown representation kind: {which}")
