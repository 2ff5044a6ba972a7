"""Exact linear flows of the viscous wave operator.

Per Fourier mode the homogeneous equation

    u'' + c u' + kappa u = 0,     kappa = <n>^2,  c = |n|  (c = 0 undamped),

has roots ``lambda = -a +- i b`` with ``a = c/2`` and
``b = sqrt(kappa - a^2)``; with damping ``b = <<n>> = sqrt(1 + 3|n|^2/4)``.
The 2x2 flow matrix ``G(n, t)`` acting on ``(u, u')`` is

    [[ e^{-at}(cos bt + (a/b) sin bt),   e^{-at} sin(bt)/b          ],
     [ -kappa e^{-at} sin(bt)/b,          e^{-at}(cos bt - (a/b) sin bt) ]]

whose top-right entry is the symbol of the Duhamel propagator ``S(t)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import FrequencyLattice, SpectralField, BESSEL, D, sobolev_norm

__all__ = [
    "FlowState",
    "HomogeneousFlow",
    "ModeRates",
    "flow_matrix",
    "homogeneous_flow",
    "duhamel_S",
    "forcing_response",
    "linear_forcing_response",
    "poisson_apply",
    "poisson_operator_norm",
    "schauder_exponent_check",
    "phi1",
]


@dataclass(frozen=True)
class ModeRates:
    """Damping ``a``, frequency ``b`` and stiffness ``kappa`` of each mode."""

    a: np.ndarray
    b: np.ndarray
    kappa: np.ndarray

    @classmethod
    def of(cls, absn: np.ndarray, damping: bool = True) -> "ModeRates":
        absn = np.asarray(absn, dtype=np.float64)
        kappa = 1.0 + absn**2
        if damping:
            a = 0.5 * absn
            b = np.sqrt(1.0 + 0.75 * absn**2)
        else:
            a = np.zeros_like(absn)
            b = np.sqrt(kappa)
        return cls(a, b, kappa)

    @classmethod
    def on(cls, lattice: FrequencyLattice, damping: bool = True) -> "ModeRates":
        return cls.of(lattice.absn, damping)

    @property
    def lam(self) -> np.ndarray:
        return -self.a + 1j * self.b


def phi1(z: np.ndarray) -> np.ndarray:
    """``(e^z - 1)/z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=np.complex128)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2, np.expm1(safe) / safe)


def _exp_moments(lam: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``J0 = int_0^t e^{lam s} ds`` and ``J1 = int_0^t s e^{lam s} ds``."""
    z = lam * t
    j0 = t * phi1(z)
    # int_0^1 s e^{zs} ds = (e^z - phi1(z)) / z, series for small z
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    direct = (np.exp(safe) - phi1(safe)) / safe
    series = 0.5 + z / 3 + z**2 / 8 + z**3 / 30
    j1 = t * t * np.where(small, series, direct)
    return j0, j1


@dataclass(frozen=True)
class HomogeneousFlow:
    """Per-mode entries of ``G(n, t)``."""

    t: float
    g11: np.ndarray
    g12: np.ndarray
    g21: np.ndarray
    g22: np.ndarray

    def apply(self, u: np.ndarray, ut: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.g11 * u + self.g12 * ut, self.g21 * u + self.g22 * ut

    def matrix(self) -> np.ndarray:
        """Entries stacked as ``(..., 2, 2)``."""
        return np.stack(
            [np.stack([self.g11, self.g12], -1), np.stack([self.g21, self.g22], -1)], -2
        )


def flow_matrix(rates: ModeRates | FrequencyLattice, t: float, damping: bool = True) -> HomogeneousFlow:
    if isinstance(rates, FrequencyLattice):
        rates = ModeRates.on(rates, damping)
    a, b, kappa = rates.a, rates.b, rates.kappa
    t = float(t)
    decay = np.exp(-a * t)
    cos = np.cos(b * t)
    sin_b = np.sin(b * t) / b
    s = decay * sin_b
    return HomogeneousFlow(
        t=t,
        g11=decay * (cos + a * sin_b),
        g12=s,
        g21=-kappa * s,
        g22=decay * (cos - a * sin_b),
    )


def forcing_response(rates: ModeRates, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Response to a unit constant force over ``[0, t]``.

    Returns ``(int_0^t S(s) ds, S(t))``; an equation ``w' = L w + e2 F``
    with ``F`` frozen gains ``(p1 F, p2 F)`` from it.
    """
    j0, _ = _exp_moments(rates.lam, t)
    p1 = j0.imag / rates.b
    p2 = np.exp(-rates.a * t) * np.sin(rates.b * t) / rates.b
    return p1, p2


def linear_forcing_response(rates: ModeRates, t: float):
    """Product-integration weights for a force interpolated linearly on ``[0, t]``.

    For ``F(s) = F0 (1 - s/t) + F1 s/t`` the gain over the interval is
    ``(w0_top F0 + w1_top F1, w0_bot F0 + w1_bot F1)``.
    """
    lam, b = rates.lam, rates.b
    j0, j1 = _exp_moments(lam, t)
    # right-end weight: int_0^t G(t-s) e2 (s/t) ds = int_0^t G(tau) e2 (1 - tau/t) dtau
    k = j0 - j1 / t
    w1_top = k.imag / b
    w1_bot = (lam * k).imag / b
    p1, p2 = forcing_response(rates, t)
    return (p1 - w1_top, w1_top), (p2 - w1_bot, w1_bot)


@dataclass(frozen=True)
class FlowState:
    """Phase-space point ``(v, v_t)`` at time ``t``."""

    v: SpectralField
    vt: SpectralField
    t: float = 0.0

    def __post_init__(self):
        if self.v.lattice != self.vt.lattice:
            raise ValueError("v and v_t must share one lattice")

    @property
    def lattice(self) -> FrequencyLattice:
        return self.v.lattice

    @classmethod
    def zeros(cls, lattice: FrequencyLattice, batch=(), t: float = 0.0) -> "FlowState":
        z = SpectralField.zeros(lattice, batch)
        return cls(z, z, t)


def homogeneous_flow(t: float, state: FlowState, damping: bool = True) -> FlowState:
    """Advance ``state`` by ``t >= 0`` under the linear viscous wave flow."""
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    g = flow_matrix(state.lattice, t, damping)
    u, ut = g.apply(state.v.coeffs, state.vt.coeffs)
    lat = state.lattice
    return FlowState(SpectralField(lat, u), SpectralField(lat, ut), state.t + t)


def duhamel_S(t: float, f: SpectralField) -> SpectralField:
    """``S(t) f`` with symbol ``e^{-|n|t/2} sin(t<<n>>)/<<n>>``."""
    if t < 0:
        raise ValueError("propagator time must be nonnegative")
    g = flow_matrix(f.lattice, t)
    return SpectralField(f.lattice, g.g12 * f.coeffs)


def _poisson_symbol(absn, t, alpha):
    with np.errstate(divide="ignore", invalid="ignore"):
        pw = np.where(absn > 0, absn**alpha, 1.0 if alpha == 0 else 0.0)
    return pw * np.exp(-0.5 * absn * t)


def poisson_apply(t: float, alpha: float, f: SpectralField) -> SpectralField:
    """``D^alpha e^{-Dt/2} f``."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if t < 0 or (t == 0 and alpha > 0):
        raise ValueError("D^alpha P(t) is unbounded at t = 0 for alpha > 0")
    return SpectralField(f.lattice, _poisson_symbol(f.lattice.absn, t, alpha) * f.coeffs)


def poisson_operator_norm(t: float, alpha: float, lattice: FrequencyLattice) -> float:
    """``L^2 -> L^2`` norm of ``D^alpha P(t)`` on the lattice (max of the symbol)."""
    sym = _poisson_symbol(lattice.absn[lattice.mask(lattice.N)], t, alpha)
    return float(sym.max())


def schauder_exponent_check(alpha: float, t_grid=None, lattice: FrequencyLattice | None = None):
    """Fit the exponent of ``||D^alpha P(t)||_{L^2 -> L^2}`` against ``t``.

    Returns ``(slope, residual)`` of the least-squares line through
    ``(log t, log norm)``; the residual is the RMS deviation of the fit.
    """
    from .harness.fits import fit_loglinear

    if t_grid is None:
        t_grid = 2.0 ** np.arange(-8.0, -1.0)
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(t_grid <= 0) or np.any(t_grid > 1):
        raise ValueError("times must lie in (0, 1]")
    if lattice is None:
        reach = 4.0 * max(alpha, 0.5) / t_grid.min()
        M = 2 * int(np.ceil(reach)) + 2
        lattice = FrequencyLattice(M)
    norms = np.array([poisson_operator_norm(t, alpha, lattice) for t in t_grid])
    fit = fit_loglinear(np.log(t_grid), np.log(norms))
    resid = float(np.sqrt(np.mean((np.log(norms) - fit.predict(np.log(t_grid))) ** 2)))
    return fit.slope, resid


def energy_per_mode(u: np.ndarray, ut: np.ndarray, lattice: FrequencyLattice) -> np.ndarray:
    """``<n>^2 |u(n)|^2 + |u_t(n)|^2``."""
    return BESSEL(lattice) ** 2 * np.abs(u) ** 2 + np.abs(ut) ** 2


def h1_norm(state: FlowState) -> np.ndarray:
    """Norm of ``(v, v_t)`` in ``H^1 x L^2``."""
    return np.sqrt(sobolev_norm(state.v, 1.0) ** 2 + sobolev_norm(state.vt, 0.0) ** 2)
