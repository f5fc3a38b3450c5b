"""Coefficient dictionaries, conformal covariance, and data reconstruction.

The constraint system is solved in a "general" parametrization: a scalar
equation with coefficient fields (h, f, rho1, rho2, b, drift slots, Psi, Y)
and a vector equation for the drift potential W.  This module owns the
translations between that parametrization and the physical one
(densitized lapse, drift, scalar field, momenta, mean curvature), plus the
covariance machinery: conformal change of background, window rescalings,
and the reconstruction of an initial-data set with its constraint residuals.

Two conventions are load-bearing everywhere:

* the flat background with geometer-sign Laplacian, so a conformally flat
  metric phi^{q-2} xi has c_n R = phi^{1-q} Delta phi with Delta = -div grad;
* vector fields enter the general system through their covariant (1-form)
  components, which is what makes Z = phi^{2-q} W the right unknown: the
  deformation tensor then obeys the exact law L_g W = phi^{q-2} L_xi Z.

The drift-gradient block of the scalar equation is stored in "slot" form,
s1 <grad u, Y>/u^2 + s2 <grad u, Y>/u^{q+2}, because conformal changes mix
the product-form constants (c, d) into genuine fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import calculus as ca
from .fields import SYM_INDEX, SYM_PAIRS, ScalarField, SobolevExponents, \
    SymTensorField, VectorField, sym_size
from .grids import BallGrid, TorusGrid, grids_match

__all__ = [
    "PhysicalCoefficients",
    "GeneralCoefficients",
    "ReconstructedData",
    "TransformedSystem",
    "RescaledWindow",
    "physical_to_general",
    "volumetric_momentum",
    "transform_system",
    "concentration_scale",
    "blowup_rescale",
    "reconstruct_initial_data",
    "constraint_residual",
    "tt_project",
    "mean_curvature_field",
]


# ---------------------------------------------------------------------------
# coefficient bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalCoefficients:
    """Physical-side data bundle on a common grid.

    nlapse is the densitized lapse (strictly positive), drift the shift-like
    vector Vtilde, traceless a transverse-traceless tensor, tau_star the
    constant volumetric mean curvature, and potential the scalar-field
    potential evaluated pointwise on psi values (None means zero).
    """

    nlapse: ScalarField
    drift: VectorField
    psi: ScalarField
    pi: ScalarField
    tau_star: float
    traceless: SymTensorField
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
    div_tol: float = 1e-6

    def __post_init__(self):
        g = self.nlapse.grid
        for fld in (self.drift, self.psi, self.pi, self.traceless):
            if not grids_match(fld.grid, g):
                raise ValueError("physical coefficients live on mixed grids")
        lo = float(np.min(self.nlapse.values))
        if lo <= 0.0:
            raise ValueError(f"densitized lapse must be positive (min {lo:.3e})")
        if not self.traceless.trace_free:
            raise ValueError("traceless tensor must be trace-free")
        scale = float(np.max(np.abs(self.traceless.values)))
        if scale > 0:
            div = ca.tensor_divergence(self.traceless)
            worst = float(np.max(np.abs(div.values)))
            if worst > self.div_tol * max(1.0, scale):
                raise ValueError(
                    f"traceless tensor is not divergence-free "
                    f"(|div| = {worst:.3e})")

    @property
    def grid(self):
        return self.nlapse.grid

    @property
    def n(self) -> int:
        return self.grid.n

    def potential_values(self, psi_values: np.ndarray) -> np.ndarray:
        if self.potential is None:
            return np.zeros_like(psi_values)
        return np.asarray(self.potential(psi_values), dtype=float)


@dataclass(frozen=True)
class GeneralCoefficients:
    """General-parametrization coefficient fields.

    s1 and s2 are the drift-gradient slot coefficients (of <grad u,Y>/u^2
    and <grad u,Y>/u^{q+2}); when the bundle comes straight from the
    physical dictionary they factor as s1 = c*d, s2 = c with the constants
    kept in c_const/d_const for reference (None once a transformation has
    mixed them).
    """

    h: ScalarField
    f: ScalarField
    rho1: ScalarField
    rho2: ScalarField
    b: ScalarField
    s1: ScalarField
    s2: ScalarField
    Psi: SymTensorField
    Y: VectorField
    c_const: Optional[float] = None
    d_const: Optional[float] = None

    @property
    def grid(self):
        return self.h.grid

    @property
    def n(self) -> int:
        return self.grid.n

    def exponents(self) -> SobolevExponents:
        return SobolevExponents(self.n)

    def theta_margins(self) -> dict:
        """Lower bounds entering the admissible-set membership check.

        Returns min f and min (rho1 + |Psi|^2) — the W = 0 form of the
        inverse-power coefficient.
        """
        a0 = self.rho1.values + self.Psi.frobenius_sq()
        return {"f_min": float(np.min(self.f.values)),
                "a0_min": float(np.min(a0))}


def _const(grid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, float(value)))


# ---------------------------------------------------------------------------
# physical -> general dictionary
# ---------------------------------------------------------------------------


def physical_to_general(p: PhysicalCoefficients) -> GeneralCoefficients:
    """Fieldwise substitution dictionary on a flat background.

    h  = -c_n |grad psi|^2                 (flat background curvature)
    f  = c_n (2 V(psi) - alpha tau*^2)
    rho1 = c_n (pi^2 - alpha (N div V)^2)
    rho2 = sqrt(c_n) N / 2,   Psi = sqrt(c_n) U
    b  = ((n-2)/(2n)) tau* N div V
    c  = sqrt((n-2)/n),  d = tau*,  Y = sqrt(n/(n-2)) N V
    """
    g = p.grid
    n = g.n
    ex = SobolevExponents(n)
    cn = ex.cnf
    alpha = ex.alphaf
    Nv = p.nlapse.values
    gradpsi = ca.grad(p.psi)
    divV = ca.divergence(p.drift)
    ndv = Nv * divV.values

    h = ScalarField(g, -cn * np.sum(gradpsi.values ** 2, axis=0))
    V = p.potential_values(p.psi.values)
    f = ScalarField(g, cn * (2.0 * V - alpha * p.tau_star ** 2))
    rho1 = ScalarField(g, cn * (p.pi.values ** 2 - alpha * ndv ** 2))
    rho2 = ScalarField(g, math.sqrt(cn) * Nv / 2.0)
    Psi = SymTensorField(g, math.sqrt(cn) * p.traceless.values,
                         trace_free=True)
    b = ScalarField(g, ((n - 2) / (2.0 * n)) * p.tau_star * ndv)
    c_const = math.sqrt((n - 2) / n)
    d_const = p.tau_star
    Y = VectorField(g, math.sqrt(n / (n - 2)) * Nv * p.drift.values)
    return GeneralCoefficients(
        h=h, f=f, rho1=rho1, rho2=rho2, b=b,
        s1=_const(g, c_const * d_const), s2=_const(g, c_const),
        Psi=Psi, Y=Y, c_const=c_const, d_const=d_const)


def mean_curvature_field(u: ScalarField, p: PhysicalCoefficients) -> ScalarField:
    """tau(u) = tau* + u^{-2q} N div(u^q Vtilde)."""
    g = u.grid
    ex = SobolevExponents(g.n)
    q = ex.qf
    uq = u.values ** q
    flux = VectorField(g, uq[None] * p.drift.values)
    div = ca.divergence(flux)
    return ScalarField(g, p.tau_star
                       + p.nlapse.values * div.values / uq ** 2)


def volumetric_momentum(tau: ScalarField, N: ScalarField,
                        vol: ScalarField) -> float:
    """Weighted average int N tau vol / int N vol."""
    if np.min(N.values) <= 0:
        raise ValueError("lapse weight must be positive")
    if np.min(vol.values) <= 0:
        raise ValueError("volume density must be positive")
    g = tau.grid
    den = g.integrate(N.values * vol.values)
    if abs(den) < 1e-300:
        raise ValueError("vanishing denominator in volumetric average")
    return float(g.integrate(N.values * tau.values * vol.values) / den)


def tt_project(S: SymTensorField) -> SymTensorField:
    """Spectral transverse-traceless projection on the torus.

    The trace is removed first (pointwise), then mode by mode with
    P_ij = delta_ij - khat_i khat_j:  TT(S) = P S P - (P:S) P / (n-1).
    The zero mode passes through de-traced (a constant symmetric
    trace-free tensor is already divergence-free).
    """
    g = S.grid
    if not isinstance(g, TorusGrid):
        raise ValueError("transverse-traceless projection needs a torus")
    n = g.n
    ks, k2 = ca._torus_spectral(g)
    khat = [np.where(k2 == 0, 0.0, ks[i] / np.sqrt(np.where(k2 == 0, 1.0, k2)))
            for i in range(n)]
    rshape = g.shape[:-1] + (g.m // 2 + 1,)
    trace = S.trace() / n
    Shat = np.empty((n, n) + rshape, dtype=complex)
    for i in range(n):
        for j in range(n):
            k = SYM_INDEX[n][(min(i, j), max(i, j))]
            vals = S.values[k] - trace if i == j else S.values[k]
            Shat[i, j] = np.fft.rfftn(vals)
    P = [[((1.0 if i == j else 0.0) - khat[i] * khat[j]) for j in range(n)]
         for i in range(n)]
    PSP = np.empty_like(Shat)
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a in range(n):
                for bb in range(n):
                    acc = acc + P[i][a] * Shat[a, bb] * P[bb][j]
            PSP[i, j] = acc
    PS = sum(P[a][bb] * Shat[a, bb] for a in range(n) for bb in range(n))
    comps = []
    for (i, j) in SYM_PAIRS[n]:
        t = PSP[i, j] - PS * P[i][j] / (n - 1)
        comps.append(np.fft.irfftn(t, s=g.shape, axes=range(n)))
    return SymTensorField(g, np.stack(comps), trace_free=True)


# ---------------------------------------------------------------------------
# conformal change of background
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformedSystem:
    v: ScalarField
    Z: VectorField
    coeffs: GeneralCoefficients
    phi: ScalarField


def transform_system(phi: ScalarField, gc: GeneralCoefficients,
                     p: PhysicalCoefficients = None,
                     u: ScalarField = None,
                     W: VectorField = None) -> TransformedSystem:
    """Rewrite the system over the background g = phi^{q-2} xi in the xi chart.

    v = phi u and Z = phi^{2-q} W solve the transformed system whose
    coefficients are returned.  The physical bundle is accepted for
    signature completeness; the laws act on the general coefficients only.
    The correctness contract is covariance of the scalar residual:
    residual_xi(v, Z; tilde) = phi^{q-1} residual_g(u, W; gc) pointwise.
    """
    g = phi.grid
    if float(np.min(phi.values)) <= 0.0:
        raise ValueError("conformal factor must be positive")
    n = g.n
    q = SobolevExponents(n).qf
    ph = phi.values
    lap_phi = ca.laplace_beltrami(phi).values
    grad_phi = ca.grad(phi).values
    # <grad phi, Y> in the flat chart
    dot = np.sum(grad_phi * gc.Y.values, axis=0)

    h_t = ph ** (q - 2) * gc.h.values - lap_phi / ph
    Y_t = VectorField(g, ph[None] ** 2 * gc.Y.values)
    Psi_t = SymTensorField(g, ph[None] ** 2 * gc.Psi.values, trace_free=True)
    rho2_t = ScalarField(g, ph ** q * gc.rho2.values)
    s1_t = ScalarField(g, gc.s1.values.copy())
    s2_t = ScalarField(g, ph ** q * gc.s2.values - 2.0 * ph * dot)
    b_t = ScalarField(g, ph ** q * gc.b.values - gc.s1.values * ph * dot)
    rho1_t = ScalarField(g, ph ** (2 * q) * gc.rho1.values
                         + gc.s2.values * ph ** (q + 1) * dot
                         - ph ** 2 * dot ** 2)
    coeffs = GeneralCoefficients(
        h=ScalarField(g, h_t), f=gc.f, rho1=rho1_t, rho2=rho2_t, b=b_t,
        s1=s1_t, s2=s2_t, Psi=Psi_t, Y=Y_t)

    v = ScalarField(g, ph * u.values) if u is not None else None
    Z = VectorField(g, ph[None] ** (2 - q) * W.values) if W is not None \
        else None
    return TransformedSystem(v=v, Z=Z, coeffs=coeffs, phi=phi)


# ---------------------------------------------------------------------------
# window rescalings
# ---------------------------------------------------------------------------


def _sample_scalar(values: np.ndarray, grid, pts: np.ndarray) -> np.ndarray:
    if isinstance(grid, TorusGrid):
        return ca.torus_sample_spectral(values, grid, pts)
    return ca.ball_sample(values, grid, pts)


def concentration_scale(u: ScalarField, W: VectorField, x_c) -> float:
    """mu with mu^{-n} = u^q + |grad u / u|^n + |hess u / u|^{n/2} + |L W|
    evaluated at x_c."""
    g = u.grid
    n = g.n
    q = SobolevExponents(n).qf
    x_c = np.asarray(x_c, dtype=float)
    gradu = ca.grad(u)
    hessu = ca.hessian(u)
    LW = ca.conformal_killing(W)

    def at(vals):
        if isinstance(g, BallGrid) and np.linalg.norm(x_c) < 1e-14 * g.R:
            return ca.ball_center_value(vals, g)
        return float(_sample_scalar(vals, g, x_c[None])[0])

    uval = at(u.values)
    if uval <= 0:
        raise ValueError("positive scalar profile required")
    gval = math.sqrt(sum(at(gradu.values[i]) ** 2 for i in range(n)))

    def frob_at(tensor):
        return math.sqrt(sum((1.0 if i == j else 2.0) * at(tensor.values[k]) ** 2
                             for k, (i, j) in enumerate(SYM_PAIRS[n])))

    hval = frob_at(hessu)
    lval = frob_at(LW)
    S = uval ** q + (gval / uval) ** n + (hval / uval) ** (n / 2.0) + lval
    return S ** (-1.0 / n)


@dataclass(frozen=True)
class RescaledWindow:
    v: ScalarField
    Z: VectorField
    coeffs: Optional[GeneralCoefficients]
    mu: float
    center: np.ndarray


def blowup_rescale(u: ScalarField, W: VectorField, x_c, mu: float,
                   out_grid=None, gc: GeneralCoefficients = None,
                   phi: ScalarField = None) -> RescaledWindow:
    """Zoom into x_c at scale mu: v(x) = mu^{(n-2)/2} phi(T x) u(T x),
    Z(x) = mu^{n-1} phi(T x)^{2-q} W(T x) with T x = x_c + mu x.

    Coefficients, when supplied, are rescaled with the weights that make
    the scalar residual exactly covariant:
        h -> mu^2 h,  f -> f,  rho1 -> mu^{2n} rho1,  rho2 -> rho2,
        Psi -> mu^n Psi,  b -> mu^n b,  s1 -> s1,  s2 -> mu^{(n+2)/2} s2,
        Y -> mu^{n-1} Y   (all composed with T).
    Pass the already-transformed bundle together with phi when the source
    background is conformally flat rather than flat.
    """
    g = u.grid
    n = g.n
    if mu <= 0:
        raise ValueError("scale must be positive")
    q = SobolevExponents(n).qf
    kappa = (n - 2) / 2.0
    x_c = np.asarray(x_c, dtype=float)
    if out_grid is None:
        out_grid = g
    # farthest sample point of the window, measured from x_c
    if isinstance(out_grid, BallGrid):
        reach = mu * out_grid.R
        diam = 2.0 * reach
    else:
        reach = mu * out_grid.L * math.sqrt(n)
        diam = mu * out_grid.L
    if isinstance(g, BallGrid):
        if np.linalg.norm(x_c) + reach > g.R * (1 + 1e-12):
            raise ValueError("rescaled window escapes the domain")
    else:
        # periodic sampling is exact, but a window wider than one cell
        # would see its own copies
        if diam > g.L * (1 + 1e-12):
            raise ValueError("rescaled window wraps the periodic cell")

    if isinstance(out_grid, BallGrid):
        pts = out_grid.points().reshape(-1, n)
    else:
        pts = np.moveaxis(out_grid.coords(), 0, -1).reshape(-1, n)
    shape = out_grid.shape
    src = x_c + mu * pts

    def samp(values):
        return _sample_scalar(values, g, src).reshape(shape)

    phf = samp(phi.values) if phi is not None else 1.0
    v = ScalarField(out_grid, mu ** kappa * phf * samp(u.values))
    zf = phf ** (2 - q) if phi is not None else 1.0
    Z = VectorField(out_grid, np.stack(
        [mu ** (n - 1) * zf * samp(W.values[i]) for i in range(n)]))

    coeffs = None
    if gc is not None:
        coeffs = GeneralCoefficients(
            h=ScalarField(out_grid, mu ** 2 * samp(gc.h.values)),
            f=ScalarField(out_grid, samp(gc.f.values)),
            rho1=ScalarField(out_grid, mu ** (2 * n) * samp(gc.rho1.values)),
            rho2=ScalarField(out_grid, samp(gc.rho2.values)),
            b=ScalarField(out_grid, mu ** n * samp(gc.b.values)),
            s1=ScalarField(out_grid, samp(gc.s1.values)),
            s2=ScalarField(out_grid,
                           mu ** ((n + 2) / 2.0) * samp(gc.s2.values)),
            Psi=SymTensorField(out_grid, np.stack(
                [mu ** n * samp(gc.Psi.values[k])
                 for k in range(sym_size(n))]), trace_free=True),
            Y=VectorField(out_grid, np.stack(
                [mu ** (n - 1) * samp(gc.Y.values[i]) for i in range(n)])))
    return RescaledWindow(v=v, Z=Z, coeffs=coeffs, mu=float(mu),
                          center=x_c)


# ---------------------------------------------------------------------------
# initial-data reconstruction and constraint residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReconstructedData:
    """Initial-data set in conformal representation.

    The metric is factor * flat with factor = u^{q-2}; extrinsic holds the
    covariant components of the second fundamental form in the flat chart.
    """

    factor: ScalarField
    extrinsic: SymTensorField
    psi: ScalarField
    pi: ScalarField

    @property
    def grid(self):
        return self.factor.grid

    def u(self) -> ScalarField:
        n = self.grid.n
        # factor = u^{q-2} with q - 2 = 4/(n-2)
        return ScalarField(self.grid,
                           self.factor.values ** ((n - 2) / 4.0))


def reconstruct_initial_data(u: ScalarField, W: VectorField,
                             p: PhysicalCoefficients) -> ReconstructedData:
    """Assemble (metric factor, extrinsic curvature, scalar matter) from a
    solution pair.

    K = u^{-2} (N/2 L W + U) + (tau(u)/n) u^{q-2} delta, with tau(u) the
    drift-expanded mean curvature; the matter momentum flips sign under
    the conformal weight, pi_hat = -u^{-q} pi.
    """
    g = u.grid
    n = g.n
    q = SobolevExponents(n).qf
    if float(np.min(u.values)) <= 0.0:
        raise ValueError("conformal factor must be positive")
    LW = ca.conformal_killing(W)
    A = (p.nlapse.values[None] / 2.0) * LW.values + p.traceless.values
    tau = mean_curvature_field(u, p)
    factor = u.values ** (q - 2)
    comps = []
    for k, (i, j) in enumerate(SYM_PAIRS[n]):
        e = u.values ** (-2) * A[k]
        if i == j:
            e = e + tau.values / n * factor
        comps.append(e)
    K = SymTensorField(g, np.stack(comps))
    return ReconstructedData(
        factor=ScalarField(g, factor),
        extrinsic=K,
        psi=p.psi,
        pi=ScalarField(g, -u.values ** (-q) * p.pi.values))


def constraint_residual(data: ReconstructedData,
                        potential: Callable[[np.ndarray], np.ndarray] = None
                        ) -> tuple:
    """Hamiltonian and momentum residuals of an initial-data set.

    Everything is evaluated from (metric factor, K, psi, pi) alone —
    curvature from the exact conformally-flat formula, the divergence of K
    through the Christoffel symbols of the rescaled metric — so a
    reconstructed solution is checked through an independent route.
    """
    g = data.grid
    n = g.n
    ex = SobolevExponents(n)
    q, cn = ex.qf, ex.cnf
    u = data.u()
    uv = u.values
    lap_u = ca.laplace_beltrami(u).values
    R_hat = uv ** (1 - q) * lap_u / cn

    Kf = np.empty((n, n) + g.shape)
    for i in range(n):
        for j in range(n):
            Kf[i, j] = data.extrinsic.values[SYM_INDEX[n][(min(i, j),
                                                           max(i, j))]]
    inv_factor = uv ** (2 - q)
    tr = inv_factor * np.einsum("ii...->...", Kf)
    K2 = inv_factor ** 2 * np.einsum("ij...,ij...->...", Kf, Kf)
    gradpsi = ca.grad(data.psi).values
    grad2 = inv_factor * np.sum(gradpsi ** 2, axis=0)
    V = np.zeros(g.shape) if potential is None \
        else np.asarray(potential(data.psi.values), dtype=float)
    H = ScalarField(g, R_hat + tr ** 2 - K2 - data.pi.values ** 2
                    - grad2 - 2.0 * V)

    # momentum: div_hat K through the conformal Christoffels
    # (omega = log of the conformal factor, halved)
    omega_grad = ca.grad(ScalarField(g, np.log(uv))).values * (q - 2) / 2.0
    trK_flat = np.einsum("ii...->...", Kf)
    divK = np.empty((n,) + g.shape)
    grads = {k: ca.grad(ScalarField(g, data.extrinsic.values[k])).values
             for k in range(sym_size(n))}
    for i in range(n):
        flat_div = sum(grads[SYM_INDEX[n][(min(i, j), max(i, j))]][j]
                       for j in range(n))
        corr = -omega_grad[i] * trK_flat \
            + (n - 2) * sum(omega_grad[j] * Kf[i, j] for j in range(n))
        divK[i] = inv_factor * (flat_div + corr)
    grad_tr = ca.grad(ScalarField(g, tr)).values
    M = VectorField(g, grad_tr - divK
                    - data.pi.values[None] * gradpsi)
    return H, M
