"""Hermite polynomials, Wick powers and the renormalized nonlinearity.

``H_l(x; s)`` are the monic Hermite polynomials with variance parameter,
generated by ``exp(t x - s t^2 / 2) = sum_l t^l / l! H_l(x; s)``.  A Wick
power of a band-limited Gaussian field is ``H_l`` applied pointwise on a
grid fine enough that the polynomial is exact in Fourier space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np

from .linflow import FlowState
from .noise import NoisePath, alpha_closed_form, sigma_closed_form
from .spectral import (
    FrequencyLattice,
    SpectralField,
    _from_grid,
    _to_grid,
    project,
    required_grid,
)

__all__ = [
    "DealiasingError",
    "hermite",
    "hermite_table",
    "wick_power",
    "renorm_nonlinearity",
    "renorm_grid",
    "EnhancedDataSet",
    "build_enhanced_data",
    "band_of",
]


class DealiasingError(ValueError):
    """The grid is too coarse to evaluate a polynomial product exactly."""


def hermite(l: int, x, sigma):
    """``H_l(x; sigma)`` by ``H_{l+1} = x H_l - l sigma H_{l-1}``."""
    if l < 0:
        raise ValueError("Hermite degree must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    prev, cur = np.ones_like(x), x
    if l == 0:
        return prev if prev.ndim else float(prev)
    for j in range(1, l):
        prev, cur = cur, x * cur - j * sigma * prev
    return cur if np.ndim(cur) else float(cur)


def hermite_table(k: int, x, sigma) -> list[np.ndarray]:
    """``[H_0, ..., H_k]`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    out = [np.ones_like(x), x]
    for j in range(1, k):
        out.append(x * out[j] - j * sigma * out[j - 1])
    return out[: k + 1]


def band_of(f: SpectralField, tol: float = 0.0) -> int:
    """Declared band limit, or the largest ``ceil|n|`` carrying a nonzero coefficient."""
    lat = f.lattice
    if lat.N is not None:
        return lat.N
    live = np.any(np.abs(f.coeffs) > tol, axis=tuple(range(f.coeffs.ndim - 2)))
    if not live.any():
        return 0
    return int(np.ceil(np.sqrt(lat.norm2[live].max()) - 1e-12))


def _check_grid(M: int, band: int, degree: int, target_band: int | None, what: str):
    need = required_grid(band, degree, target_band)
    if M < need:
        raise DealiasingError(
            f"{what}: degree {degree} at band {band} needs grid M >= {need}, lattice has M = {M}"
        )


def _variance_array(variance, batch_shape):
    v = np.asarray(variance, dtype=np.float64)
    return v.reshape(v.shape + (1, 1)) if v.ndim else v


def wick_power(Z: SpectralField, l: int, variance, target_band: int | None = None) -> SpectralField:
    """``:Z^l:`` = ``H_l(Z; variance)`` evaluated pointwise, returned spectrally.

    ``variance`` may be a scalar or an array matching the batch axes of
    ``Z``.  Exact in every mode when ``M >= 2(l N + 1)``; with
    ``target_band`` the result is projected to that band, which needs only
    ``M > l N + target_band``.
    """
    N = band_of(Z)
    _check_grid(Z.lattice.M, N, l, target_band, "wick_power")
    if l == 1:
        out = SpectralField(Z.lattice.with_band(N), Z.coeffs.copy())
        return out if target_band is None else project(target_band, out)
    x = _to_grid(Z.coeffs, Z.lattice.M)
    h = hermite(l, x, _variance_array(variance, Z.batch_shape))
    lat = Z.lattice
    band = l * N
    coeffs = _from_grid(np.asarray(h, dtype=np.float64) * np.ones_like(x), lat)
    res_band = band if (band + 1) * 2 <= lat.M else None
    out = SpectralField(lat.with_band(res_band), coeffs)
    return out if target_band is None else project(target_band, out)


def renorm_grid(v: np.ndarray, xis: Sequence[np.ndarray], k: int) -> np.ndarray:
    """``sum_l C(k,l) Xi_l v^{k-l}`` on grid values (``Xi_0 = 1``), by Horner's rule in ``v``."""
    if len(xis) != k:
        raise ValueError(f"expected {k} Wick powers, got {len(xis)}")
    # (((v + C(k,1) Xi_1) v + C(k,2) Xi_2) v + ...) + Xi_k
    acc = np.ones_like(np.asarray(v, dtype=np.float64))
    for l in range(1, k + 1):
        acc = acc * v + comb(k, l) * xis[l - 1]
    return acc


def renorm_nonlinearity(v: SpectralField, xis: Sequence[SpectralField], k: int, band: int | None = None) -> SpectralField:
    """Renormalized power ``:u^k: = sum_{l=0}^k C(k,l) Xi_l v^{k-l}``.

    ``xis`` holds ``Xi_1, ..., Xi_k`` on the lattice of ``v``.  With
    ``band`` the result is projected to ``|n| <= band``.
    """
    if len(xis) != k:
        raise ValueError(f"degree {k} needs Xi_1..Xi_{k}, got {len(xis)} fields")
    lat = v.lattice
    for x in xis:
        if x.lattice.M != lat.M:
            raise ValueError("Wick powers and v must share one grid")
    nv = band_of(v)
    nz = max((band_of(x) / (l + 1) for l, x in enumerate(xis)), default=0.0)
    base = int(np.ceil(max(nv, nz) - 1e-12))
    _check_grid(lat.M, base, k, band, "renorm_nonlinearity")
    vg = _to_grid(v.coeffs, lat.M)
    xg = [_to_grid(x.coeffs, lat.M) for x in xis]
    out = SpectralField(lat.with_band(None), _from_grid(renorm_grid(vg, xg, k), lat))
    return out if band is None else project(band, out)


@dataclass
class EnhancedDataSet:
    """Initial data with the Wick-power series ``Xi_1..Xi_k`` of a noise path.

    The series is evaluated lazily, node by node, on ``lattice``: ``xi(j)``
    returns grid values ``[Xi_1(t_j), ..., Xi_k(t_j)]`` with shape
    ``(replicas, M, M)`` each.  Variances come from the closed forms
    (``sigma_N(t)`` for the stochastic convolution, ``alpha_N`` for a
    stationary linear evolution).
    """

    data: FlowState
    path: NoisePath | None
    k: int
    lattice: FrequencyLattice
    variance: Callable[[float], float]
    time_grid: np.ndarray
    cache: bool = False
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.path is not None:
            _check_grid(self.lattice.M, self.path.N, 1, None, "enhanced data")

    @property
    def replicas(self) -> int:
        return self.data.v.coeffs.shape[0] if self.data.v.coeffs.ndim == 3 else 1

    def base(self, j: int) -> np.ndarray:
        """Grid values of the Gaussian field at node ``j``."""
        if self.path is None:
            return np.zeros(self.data.v.coeffs.shape, dtype=np.float64)
        c = self.path.modes.scatter(self.path.psi[:, j], self.lattice)
        return _to_grid(c, self.lattice.M)

    def xi(self, j: int) -> list[np.ndarray]:
        if j in self._memo:
            return self._memo[j]
        x = self.base(j)
        s = self.variance(float(self.time_grid[j])) if self.path is not None else 0.0
        tab = hermite_table(self.k, x, s)[1:]
        if self.path is None:
            tab = [np.zeros_like(x) for _ in range(self.k)]
        if self.cache:
            self._memo[j] = tab
        return tab

    def fields(self, j: int) -> list[SpectralField]:
        return [SpectralField(self.lattice, _from_grid(x, self.lattice)) for x in self.xi(j)]

    def index_of_time(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.time_grid - t)))
        if abs(self.time_grid[j] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a node of the enhanced data set")
        return j


def build_enhanced_data(
    v0: SpectralField,
    v1: SpectralField,
    psi_path: NoisePath | None,
    variance_source: str | Callable[[float], float],
    k: int,
    lattice: FrequencyLattice | None = None,
    cache: bool = False,
) -> EnhancedDataSet:
    """Assemble ``(v0, v1, Xi_1, ..., Xi_k)``.

    ``variance_source`` is ``"sigma"`` (time-dependent variance of the
    stochastic convolution), ``"alpha"`` (stationary variance) or a
    callable ``t -> variance``.
    """
    lattice = v0.lattice if lattice is None else lattice
    if psi_path is None:
        var = lambda t: 0.0  # noqa: E731
        tg = np.array([0.0])
    else:
        N = psi_path.N
        if variance_source == "sigma":
            var = lambda t: sigma_closed_form(t, N)  # noqa: E731
        elif variance_source == "alpha":
            a = alpha_closed_form(N)
            var = lambda t: a  # noqa: E731
        elif callable(variance_source):
            var = variance_source
        else:
            raise ValueError("variance_source must be 'sigma', 'alpha' or a callable")
        tg = psi_path.time_grid
    return EnhancedDataSet(FlowState(v0, v1), psi_path, k, lattice, var, np.asarray(tg), cache)
