"""Gaussian objects driving the equation: stochastic convolution, random data, variances.

Per mode ``n`` the stochastic convolution solves

    d(Psi, Psi') = A_n (Psi, Psi') dt + e2 sqrt(2|n|) dB_n,

with ``B_n`` a complex Brownian motion (``E|B_n(t)|^2 = t``).  Sampling
uses the exact Gaussian transition over each step: mean ``G(n, h) x``
and covariance ``Q(n, h) = 2|n| int_0^h G(n,s) e2 e2^T G(n,s)^T ds``,
evaluated in closed form.  Real and imaginary parts each carry half of
``Q``; the zero mode receives no forcing.

Paths are kept on half-lattice representative modes only.  Draws are
keyed by ``(seed, namespace, step, mode, replica)`` (see :mod:`svnlw.rng`),
so a band-``2N`` path restricted to ``|n| <= N`` is exactly the band-``N``
path with the same seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .linflow import ModeRates, flow_matrix, phi1
from .rng import Namespace, RngStream
from .spectral import FrequencyLattice, SpectralField, mode_ids

__all__ = [
    "ModeSet",
    "NoisePath",
    "RandomData",
    "PathSampler",
    "sigma_closed_form",
    "alpha_closed_form",
    "transition_covariance",
    "sample_psi_path",
    "sample_mu1",
    "sample_phi_path",
    "tail_estimate",
    "TailReport",
]


def _disc(N: int) -> np.ndarray:
    r = np.arange(-N, N + 1)
    n2 = (r[:, None] ** 2 + r[None, :] ** 2).ravel().astype(np.float64)
    return np.sqrt(n2[n2 <= N * N])


def sigma_closed_form(t: float, N: int) -> float:
    """Variance of ``Psi_N(t, x)``, summed over ``|n| <= N``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = _disc(N)
    jb2 = 1.0 + n**2
    jbb = np.sqrt(1.0 + 0.75 * n**2)
    # 1/<n>^2 - e^{-tn} (1 - n^2 cos(2bt)/(4<n>^2) + n b sin(2bt)/(2<n>^2)) / b^2, regrouped
    # with (1 - n^2/(4<n>^2))/b^2 = 1/<n>^2 so that small t does not cancel
    s = np.sin(jbb * t)
    osc = n**2 * s**2 / (2 * jbb**2) + n * np.sin(2 * jbb * t) / (2 * jbb)
    terms = (-np.expm1(-t * n) - np.exp(-t * n) * osc) / jb2
    return max(float(np.sum(terms)), 0.0)


def alpha_closed_form(N: int) -> float:
    """Stationary variance ``sum_{|n|<=N} 1/<n>^2``."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    return float(np.sum(1.0 / (1.0 + _disc(N) ** 2)))


def transition_covariance(rates: ModeRates, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entries ``(Q11, Q12, Q22)`` of the per-mode transition covariance.

    ``Q = 2|n| int_0^h [[S^2, S S'], [S S', S'^2]] ds`` with ``|n| = 2a``.
    Complex-circular convention: ``E|increment|^2`` per component.
    """
    a, b, lam = rates.a, rates.b, rates.lam
    c = 2.0 * a
    e_real = h * phi1(-2 * a * h).real  # int e^{-2as}
    e_cplx = h * phi1(2 * lam * h)  # int e^{2 lam s}
    s_h = np.exp(-a * h) * np.sin(b * h) / b
    int_ss = (e_real - e_cplx.real) / (2 * b * b)
    int_sds = 0.5 * s_h**2
    int_dsds = (np.abs(lam) ** 2 * e_real - (lam**2 * e_cplx).real) / (2 * b * b)
    q11 = 2 * c * int_ss
    q12 = 2 * c * int_sds
    q22 = 2 * c * int_dsds
    return np.maximum(q11, 0.0), q12, np.maximum(q22, 0.0)


def _chol2(q11, q12, q22):
    l11 = np.sqrt(q11)
    l21 = np.where(l11 > 0, q12 / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(q22 - l21**2, 0.0))
    return l11, l21, l22


@dataclass(frozen=True)
class ModeSet:
    """Half-lattice representative modes ``|n| <= N``, zero mode first."""

    N: int
    freqs: np.ndarray  # (K, 2) integer frequencies
    ids: np.ndarray  # (K,) uint64 stream identifiers

    @classmethod
    def disc(cls, N: int) -> "ModeSet":
        lat = FrequencyLattice(max(4, 2 * N + 2))
        idx = lat.representatives(N)
        freqs = lat.frequency_of(idx)
        return cls(N, freqs, mode_ids(freqs))

    def __len__(self):
        return len(self.freqs)

    @property
    def absn(self) -> np.ndarray:
        return np.sqrt((self.freqs.astype(np.float64) ** 2).sum(-1))

    @property
    def is_zero(self) -> np.ndarray:
        return (self.freqs == 0).all(-1)

    def restrict(self, N: int) -> np.ndarray:
        """Boolean selector of the modes with ``|n| <= N``."""
        return (self.freqs.astype(np.int64) ** 2).sum(-1) <= N * N

    def scatter(self, values: np.ndarray, lattice: FrequencyLattice) -> np.ndarray:
        """Full-layout Hermitian coefficients from representative values ``(..., K)``."""
        if lattice.M < 2 * (self.N + 1):
            raise ValueError(f"lattice M={lattice.M} cannot hold band {self.N}")
        f = self.freqs
        out = np.zeros(values.shape[:-1] + lattice.shape, dtype=np.complex128)
        i, j = f[:, 0] % lattice.M, f[:, 1] % lattice.M
        ci, cj = (-f[:, 0]) % lattice.M, (-f[:, 1]) % lattice.M
        out[..., ci, cj] = np.conj(values)
        out[..., i, j] = values
        z = self.is_zero
        out[..., i[z], j[z]] = values[..., z].real
        return out

    def gather(self, coeffs: np.ndarray, lattice: FrequencyLattice) -> np.ndarray:
        f = self.freqs
        return coeffs[..., f[:, 0] % lattice.M, f[:, 1] % lattice.M]

    def point_values(self, values: np.ndarray, x=(0.0, 0.0)) -> np.ndarray:
        """Real field value at ``x`` from representative coefficients."""
        phase = np.exp(2j * np.pi * (self.freqs @ np.asarray(x, dtype=np.float64)))
        z = self.is_zero
        terms = values * phase
        return terms[..., z].real.sum(-1) + 2.0 * terms[..., ~z].real.sum(-1)

    def l2_squared(self, values: np.ndarray) -> np.ndarray:
        """``sum_{|n|<=N} |c(n)|^2`` counting both members of each pair."""
        w = np.where(self.is_zero, 1.0, 2.0)
        return (w * np.abs(values) ** 2).sum(-1)


def _complex_normals(z4: np.ndarray, is_zero: np.ndarray, pair: int = 0) -> np.ndarray:
    """Unit complex Gaussians ``E|g|^2 = 1`` from draws ``(..., K, 4)``; real on the zero mode."""
    re, im = z4[..., 2 * pair], z4[..., 2 * pair + 1]
    g = (re + 1j * im) / np.sqrt(2.0)
    return np.where(is_zero, re + 0j, g)


def _circular(z: np.ndarray, is_zero: np.ndarray, re_idx: int, im_idx: int) -> np.ndarray:
    """Complex variable with ``E|.|^2 = 1`` per unit scale; real on the zero mode."""
    return np.where(is_zero, z[..., re_idx] + 0j, (z[..., re_idx] + 1j * z[..., im_idx]) / np.sqrt(2.0))


@dataclass
class NoisePath:
    """Per-mode trajectory ``(Psi(n, t_j), Psi'(n, t_j))`` on a time grid.

    Arrays have shape ``(replicas, len(time_grid), K)`` over the modes of
    ``modes``.  ``coarse`` marks grid points that belong to the base grid
    (as opposed to bridge midpoints).
    """

    time_grid: np.ndarray
    modes: ModeSet
    psi: np.ndarray
    dpsi: np.ndarray
    rng: RngStream
    coarse: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.modes.N

    def restrict(self, N: int) -> "NoisePath":
        sel = self.modes.restrict(N)
        sub = ModeSet(N, self.modes.freqs[sel], self.modes.ids[sel])
        return NoisePath(self.time_grid, sub, self.psi[..., sel], self.dpsi[..., sel], self.rng, self.coarse)

    def field(self, j: int, lattice: FrequencyLattice, derivative: bool = False) -> SpectralField:
        vals = (self.dpsi if derivative else self.psi)[:, j]
        return SpectralField(lattice.with_band(self.N), self.modes.scatter(vals, lattice))

    def point_values(self, x=(0.0, 0.0)) -> np.ndarray:
        return self.modes.point_values(self.psi, x)

    def iter_ndjson(self):
        """Rows ``{replica, n, t, re, im, d_re, d_im}``."""
        for r, rep in enumerate(self.rng.replicas):
            for j, t in enumerate(self.time_grid):
                for k, n in enumerate(self.modes.freqs):
                    p, d = self.psi[r, j, k], self.dpsi[r, j, k]
                    yield json.dumps(
                        {
                            "replica": int(rep),
                            "n": [int(n[0]), int(n[1])],
                            "t": float(t),
                            "re": float(p.real),
                            "im": float(p.imag),
                            "d_re": float(d.real),
                            "d_im": float(d.imag),
                        }
                    )

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.iter_ndjson():
                fh.write(row + "\n")


class PathSampler:
    """Streaming exact sampler of the per-mode linear SDE.

    Holds the current state of every replica and advances it step by
    step; ``advance(h, step)`` draws from stream ``step`` of the
    transition namespace.  ``bridge`` draws the midpoint of the last
    step conditioned on both endpoints.
    """

    def __init__(self, modes: ModeSet, rng: RngStream, psi0=None, dpsi0=None):
        self.modes = modes
        self.rng = rng
        self.rates = ModeRates.of(modes.absn)
        shape = (len(rng), len(modes))
        self.psi = np.zeros(shape, np.complex128) if psi0 is None else np.array(psi0, np.complex128)
        self.dpsi = np.zeros(shape, np.complex128) if dpsi0 is None else np.array(dpsi0, np.complex128)
        self._cache: dict[float, tuple] = {}

    def _kernel(self, h: float):
        if h not in self._cache:
            g = flow_matrix(self.rates, h)
            q = transition_covariance(self.rates, h)
            self._cache[h] = (g, q, _chol2(*q))
        return self._cache[h]

    def _noise(self, namespace: int, step: int, chol) -> tuple[np.ndarray, np.ndarray]:
        z = self.rng.normals(namespace, np.uint64(step), self.modes.ids)
        zero = self.modes.is_zero
        e1 = _circular(z, zero, 0, 1)
        e2 = _circular(z, zero, 2, 3)
        l11, l21, l22 = chol
        return l11 * e1, l21 * e1 + l22 * e2

    def advance(self, h: float, step: int) -> tuple[np.ndarray, np.ndarray]:
        g, _, chol = self._kernel(float(h))
        mean = g.apply(self.psi, self.dpsi)
        n1, n2 = self._noise(Namespace.PSI, step, chol)
        self.psi, self.dpsi = mean[0] + n1, mean[1] + n2
        return self.psi, self.dpsi

    def bridge(self, x0, x1, h: float, step: int):
        """Midpoint of an interval of length ``h`` given its endpoint states."""
        g, q, _ = self._kernel(0.5 * float(h))
        m = g.apply(*x0)
        pred = g.apply(*m)
        r = (x1[0] - pred[0], x1[1] - pred[1])
        # gain K = Q1 A^T S^{-1}, S = A Q1 A^T + Q1 = Q(h)
        q11, q12, q22 = q
        a11, a12, a21, a22 = g.g11, g.g12, g.g21, g.g22
        qa11 = q11 * a11 + q12 * a12
        qa12 = q11 * a21 + q12 * a22
        qa21 = q12 * a11 + q22 * a12
        qa22 = q12 * a21 + q22 * a22
        s11, s12, s22 = transition_covariance(self.rates, float(h))
        det = s11 * s22 - s12 * s12
        ok = det > 1e-300
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        i11, i12, i22 = s22 * inv, -s12 * inv, s11 * inv
        k11 = qa11 * i11 + qa12 * i12
        k12 = qa11 * i12 + qa12 * i22
        k21 = qa21 * i11 + qa22 * i12
        k22 = qa21 * i12 + qa22 * i22
        mean0 = m[0] + k11 * r[0] + k12 * r[1]
        mean1 = m[1] + k21 * r[0] + k22 * r[1]
        # conditional covariance Q1 - K A Q1 = Q1 - K (Q1 A^T)^T
        c11 = q11 - (k11 * qa11 + k12 * qa12)
        c12 = q12 - (k11 * qa21 + k12 * qa22)
        c22 = q22 - (k21 * qa21 + k22 * qa22)
        chol = _chol2(np.maximum(c11, 0.0), c12, np.maximum(c22, 0.0))
        n1, n2 = self._noise(Namespace.PSI_BRIDGE, step, chol)
        return mean0 + n1, mean1 + n2


def _check_grid(time_grid) -> np.ndarray:
    tg = np.asarray(time_grid, dtype=np.float64)
    if tg.ndim != 1 or len(tg) < 1 or tg[0] != 0.0:
        raise ValueError("time grid must be a 1-d array starting at 0")
    if np.any(np.diff(tg) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return tg


def _run_path(tg, modes, rng, psi0, dpsi0, midpoints) -> NoisePath:
    sampler = PathSampler(modes, rng, psi0, dpsi0)
    shape = (len(rng), len(modes))
    ps, ds = [sampler.psi.copy()], [sampler.dpsi.copy()]
    times, coarse = [0.0], [True]
    for j in range(len(tg) - 1):
        h = tg[j + 1] - tg[j]
        x0 = (sampler.psi, sampler.dpsi)
        x1 = sampler.advance(h, j)
        if midpoints:
            mid = sampler.bridge(x0, x1, h, j)
            ps.append(mid[0])
            ds.append(mid[1])
            times.append(tg[j] + 0.5 * h)
            coarse.append(False)
        ps.append(x1[0].copy())
        ds.append(x1[1].copy())
        times.append(tg[j + 1])
        coarse.append(True)
    psi = np.stack(ps, axis=1).reshape(shape[0], len(times), shape[1])
    dpsi = np.stack(ds, axis=1).reshape(shape[0], len(times), shape[1])
    return NoisePath(np.array(times), modes, psi, dpsi, rng, np.array(coarse))


def sample_psi_path(time_grid, N: int, rng: RngStream, midpoints: bool = False) -> NoisePath:
    """Exact samples of the truncated stochastic convolution on ``time_grid``.

    With ``midpoints=True`` each interval's midpoint is added by exact
    conditional (bridge) sampling; the base-grid values are unchanged.
    """
    tg = _check_grid(time_grid)
    return _run_path(tg, ModeSet.disc(N), rng, None, None, midpoints)


@dataclass
class RandomData:
    """Gaussian initial data ``(u0, u1)`` on representative modes, shape ``(replicas, K)``."""

    modes: ModeSet
    u0: np.ndarray
    u1: np.ndarray
    rng: RngStream

    def fields(self, lattice: FrequencyLattice) -> tuple[SpectralField, SpectralField]:
        lat = lattice.with_band(self.modes.N)
        return (
            SpectralField(lat, self.modes.scatter(self.u0, lattice)),
            SpectralField(lat, self.modes.scatter(self.u1, lattice)),
        )


def sample_mu1(N: int, rng: RngStream, modes: ModeSet | None = None) -> RandomData:
    """Draw ``u0 = sum g_n/<n> e_n``, ``u1 = sum h_n e_n`` on ``|n| <= N``.

    ``g_n``, ``h_n`` are independent standard complex Gaussians with the
    real-field constraint; the zero mode is a real standard Gaussian.
    """
    modes = ModeSet.disc(N) if modes is None else modes
    z = rng.normals(Namespace.DATA, np.uint64(0), modes.ids)
    zero = modes.is_zero
    g = _circular(z, zero, 0, 1)
    h = _circular(z, zero, 2, 3)
    return RandomData(modes, g / np.sqrt(1.0 + modes.absn**2), h, rng)


def sample_phi_path(time_grid, N: int, data: RandomData, rng: RngStream, midpoints: bool = False) -> NoisePath:
    """Linear evolution of random data plus an independent stochastic convolution.

    The data and the forcing must come from independent streams; with
    the package's namespaces this holds whenever ``data`` was drawn by
    :func:`sample_mu1`.  Pathwise, the result equals
    ``G(t) data + Psi(t)`` with ``Psi`` from :func:`sample_psi_path`
    under the same ``rng``.
    """
    tg = _check_grid(time_grid)
    modes = data.modes
    if modes.N != N:
        sel = modes.restrict(N)
        modes = ModeSet(N, modes.freqs[sel], modes.ids[sel])
        u0, u1 = data.u0[..., sel], data.u1[..., sel]
    else:
        u0, u1 = data.u0, data.u1
    return _run_path(tg, modes, rng, u0, u1, midpoints)


@dataclass(frozen=True)
class TailReport:
    degree: int
    slope: float
    intercept: float
    r2: float
    points: int
    eps: float | None = None

    @property
    def decaying(self) -> bool:
        return self.slope < 0


def tail_estimate(norms, k: int, lower_quantile: float = 0.5, min_count: int = 10, eps: float | None = None) -> TailReport:
    """Regress the empirical log-survival function on ``lambda^{2/k}``.

    Uses sample points above ``lower_quantile`` whose survival count is
    at least ``min_count``.  No constants are asserted; the report only
    carries the fitted shape.
    """
    from .harness.fits import fit_loglinear

    x = np.sort(np.abs(np.asarray(norms, dtype=np.float64).ravel()))
    m = len(x)
    if m < 1000:
        raise ValueError("tail estimation needs at least 1000 samples")
    surv = 1.0 - np.arange(1, m + 1) / (m + 1)
    counts = m - np.arange(1, m + 1)
    keep = (np.arange(m) >= int(lower_quantile * m)) & (counts >= min_count)
    lam = x[keep] ** (2.0 / k)
    fit = fit_loglinear(lam, np.log(surv[keep]))
    return TailReport(k, fit.slope, fit.intercept, fit.r2, int(keep.sum()), eps)
