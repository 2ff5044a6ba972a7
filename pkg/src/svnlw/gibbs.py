"""Truncated Gibbs measure: density, weighted ensembles and invariance tests.

The truncated measure on ``(u1, u2)`` restricted to ``|n| <= N`` is

    d rho_N = Z_N^{-1} R_N(u1) d(mu_1 x mu_0),
    R_N(u) = exp(-1/(k+1) int H_{k+1}(P_N u; alpha_N) dx),

with ``mu_1`` the free field (``E|u1(n)|^2 = 1/<n>^2``) and ``mu_0``
white noise.  Samples are represented in whitened real coordinates: the
zero mode, then the real and imaginary parts of each half-lattice
representative, each scaled to unit prior variance.

Ensembles are self-normalized importance samples.  The default proposal
for ``u1`` is a Gaussian mixture adapted to ``rho_N`` by a pilot
preconditioned Crank-Nicolson chain and symmetrized under ``u -> -u``;
``proposal="prior"`` draws ``u1`` from ``mu_1`` instead.  ``u2`` is
always drawn from ``mu_0``, which is its exact marginal.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .dynamics import SplitIntegrator, _check_gibbs_grid
from .linflow import FlowState
from .noise import ModeSet, alpha_closed_form
from .rng import Namespace, RngStream
from .spectral import FrequencyLattice, SpectralField, _to_grid, mode_ids, required_grid
from .wick import DealiasingError, hermite

__all__ = [
    "LowESSWarning",
    "Coordinates",
    "MixtureProposal",
    "WeightedEnsemble",
    "Estimate",
    "InvarianceRow",
    "InvarianceReport",
    "density_log_RN",
    "gibbs_ensemble",
    "invariance_test",
    "default_observables",
    "gibbs_lattice",
]

ESS_WARN = 50.0


class LowESSWarning(UserWarning):
    """Importance weights are degenerate; downstream estimates are unreliable."""


def gibbs_lattice(N: int, k: int) -> FrequencyLattice:
    """Smallest grid that evaluates the density and the projected force exactly."""
    M = max(required_grid(N, k + 1, 0), required_grid(N, k, N), 2 * (N + 1) + 2)
    return FrequencyLattice(M + (M % 2), N)


def density_log_RN(u: SpectralField, N: int, k: int) -> np.ndarray:
    """``log R_N(u) = -1/(k+1) int H_{k+1}(P_N u; alpha_N) dx`` on the grid."""
    if k < 2:
        raise ValueError("the Gibbs density needs degree k >= 2")
    lat = u.lattice
    need = required_grid(N, k + 1, 0)
    if lat.M < need:
        raise DealiasingError(f"density at band {N}, degree {k + 1} needs M >= {need}")
    g = _to_grid(np.where(lat.mask(N), u.coeffs, 0.0), lat.M)
    return -np.mean(hermite(k + 1, g, alpha_closed_form(N)) * np.ones_like(g), axis=(-2, -1)) / (k + 1)


@dataclass(frozen=True)
class Coordinates:
    """Whitened real coordinates of the band ``|n| <= N``."""

    modes: ModeSet

    @classmethod
    def of(cls, N: int) -> "Coordinates":
        return cls(ModeSet.disc(N))

    @property
    def dim(self) -> int:
        return 2 * len(self.modes) - 1

    def to_coeffs(self, z: np.ndarray, scale: np.ndarray) -> np.ndarray:
        """Representative coefficients from coordinates; ``scale`` is the prior std of ``|c(n)|``."""
        c = np.empty(z.shape[:-1] + (len(self.modes),), np.complex128)
        c[..., 0] = z[..., 0] * scale[0]
        s = scale[1:] / np.sqrt(2.0)
        c[..., 1:] = (z[..., 1::2] + 1j * z[..., 2::2]) * s
        return c

    def from_coeffs(self, c: np.ndarray, scale: np.ndarray) -> np.ndarray:
        z = np.empty(c.shape[:-1] + (self.dim,))
        z[..., 0] = c[..., 0].real / scale[0]
        s = scale[1:] / np.sqrt(2.0)
        z[..., 1::2] = c[..., 1:].real / s
        z[..., 2::2] = c[..., 1:].imag / s
        return z

    @property
    def u1_scale(self) -> np.ndarray:
        return 1.0 / np.sqrt(1.0 + self.modes.absn**2)

    @property
    def u2_scale(self) -> np.ndarray:
        return np.ones(len(self.modes))


def _log_R_coords(z: np.ndarray, coords: Coordinates, lattice: FrequencyLattice, k: int, alpha: float) -> np.ndarray:
    c = coords.to_coeffs(z, coords.u1_scale)
    g = _to_grid(coords.modes.scatter(c, lattice), lattice.M)
    return -np.mean(hermite(k + 1, g, alpha) * np.ones_like(g), axis=(-2, -1)) / (k + 1)


def _std_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * np.einsum("...i,...i->...", z, z) - 0.5 * z.shape[-1] * np.log(2 * np.pi)


@dataclass
class MixtureProposal:
    """Gaussian mixture in whitened coordinates, with row-wise deterministic evaluation."""

    weights: np.ndarray  # (C,)
    means: np.ndarray  # (C, d)
    chols: np.ndarray  # (C, d, d) lower Cholesky factors of the covariances

    @property
    def _log_det(self) -> np.ndarray:
        return 2.0 * np.log(np.diagonal(self.chols, axis1=-2, axis2=-1)).sum(-1)

    def logpdf(self, z: np.ndarray) -> np.ndarray:
        d = z.shape[-1]
        # solve L y = z - mu by forward substitution per component, row by row
        out = []
        for c in range(len(self.weights)):
            L = self.chols[c]
            r = z - self.means[c]
            y = np.empty_like(r)
            for i in range(d):
                y[..., i] = (r[..., i] - np.einsum("...j,j->...", y[..., :i], L[i, :i])) / L[i, i]
            quad = np.einsum("...i,...i->...", y, y)
            out.append(np.log(self.weights[c]) - 0.5 * quad - 0.5 * self._log_det[c] - 0.5 * d * np.log(2 * np.pi))
        return logsumexp(np.stack(out, -1), axis=-1)

    def sample(self, rng: RngStream, dim: int) -> np.ndarray:
        """One draw per replica; component choice and Gaussian both keyed by replica."""
        u = rng.uniforms(Namespace.PROPOSAL, np.uint64(0), np.uint64(0))[..., 0]
        cdf = np.cumsum(self.weights)
        comp = np.minimum(np.searchsorted(cdf / cdf[-1], u, side="right"), len(self.weights) - 1)
        blocks = (dim + 3) // 4
        g = rng.normals(Namespace.PROPOSAL, np.uint64(1), np.arange(blocks, dtype=np.uint64)).reshape(len(rng), -1)[:, :dim]
        L = self.chols[comp]
        return self.means[comp] + np.einsum("rij,rj->ri", L, g)

    @classmethod
    def fit(cls, samples: np.ndarray, components: int = 8, seed: int = 0, inflate: float = 1.0) -> "MixtureProposal":
        from sklearn.mixture import GaussianMixture

        gm = GaussianMixture(components, covariance_type="full", init_params="random_from_data", random_state=seed, max_iter=500, reg_covar=1e-6)
        gm.fit(samples)
        cov = gm.covariances_ * inflate
        return cls(gm.weights_.copy(), gm.means_.copy(), np.linalg.cholesky(cov))


def pilot_chain(coords: Coordinates, lattice: FrequencyLattice, k: int, alpha: float, seed: int, chains: int = 1000, iterations: int = 600, burn: int = 200, thin: int = 10, beta: float = 0.5) -> np.ndarray:
    """pCN chains targeting ``rho_N`` in whitened coordinates; returns thinned states."""
    rng = RngStream.range(seed, chains)
    d = coords.dim
    blocks = (d + 3) // 4
    ids = np.arange(blocks, dtype=np.uint64)
    z = rng.normals(Namespace.PILOT, np.uint64(0), ids).reshape(chains, -1)[:, :d]
    lr = _log_R_coords(z, coords, lattice, k, alpha)
    keep = []
    rho = np.sqrt(1.0 - beta * beta)
    for it in range(1, iterations + 1):
        xi = rng.normals(Namespace.PILOT, np.uint64(it), ids).reshape(chains, -1)[:, :d]
        zp = rho * z + beta * xi
        lp = _log_R_coords(zp, coords, lattice, k, alpha)
        u = rng.uniforms(Namespace.PILOT, np.uint64(it), np.uint64(2**63))[..., 0]
        acc = np.log(u) < lp - lr
        z = np.where(acc[:, None], zp, z)
        lr = np.where(acc, lp, lr)
        if it > burn and (it - burn) % thin == 0:
            keep.append(z.copy())
    return np.concatenate(keep)


@dataclass
class Estimate:
    mean: float
    se: float
    ess: float
    warning: str | None = None


@dataclass
class WeightedEnsemble:
    """Importance-weighted samples of the truncated Gibbs measure.

    ``u1``, ``u2`` hold representative coefficients ``(M, K)``.
    """

    N: int
    k: int
    coords: Coordinates
    lattice: FrequencyLattice
    u1: np.ndarray
    u2: np.ndarray
    log_weights: np.ndarray
    log_R: np.ndarray
    rng: RngStream
    proposal: str = "mixture"
    sentinel: tuple | None = None  # (frequency, u1, u2) of one co-evolved mode beyond the band

    @property
    def alpha(self) -> float:
        return alpha_closed_form(self.N)

    @property
    def size(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    @property
    def warning(self) -> str | None:
        return f"ESS {self.ess:.1f} below {ESS_WARN:g}" if self.ess < ESS_WARN else None

    def log_Z(self) -> Estimate:
        """``log`` of the unnormalized mean weight, with a delta-method SE."""
        m = self.log_weights.max()
        w = np.exp(self.log_weights - m)
        mean = w.mean()
        se = w.std(ddof=1) / np.sqrt(len(w)) / mean
        return Estimate(float(np.log(mean) + m), float(se), self.ess, self.warning)

    def estimate(self, values: np.ndarray, mask: np.ndarray | None = None) -> Estimate:
        """Self-normalized mean of ``values`` with the delta-method SE."""
        lw = self.log_weights if mask is None else np.where(mask, self.log_weights, -np.inf)
        w = np.exp(lw - lw.max())
        w = w / w.sum()
        v = np.where(w > 0, values, 0.0)
        mean = float(np.sum(w * v))
        se = float(np.sqrt(np.sum(w * w * (v - mean) ** 2)))
        ess = float(1.0 / np.sum(w * w))
        return Estimate(mean, se, ess, f"ESS {ess:.1f} below {ESS_WARN:g}" if ess < ESS_WARN else None)

    def states(self) -> FlowState:
        lat = self.lattice
        m = self.coords.modes
        return FlowState(SpectralField(lat, m.scatter(self.u1, lat)), SpectralField(lat, m.scatter(self.u2, lat)))


def _sentinel(N: int) -> np.ndarray:
    return np.array([[N + 1, 0]])


def gibbs_ensemble(M: int, N: int, k: int, rng: RngStream | int, proposal: str = "mixture", components: int = 8, pilot: dict | None = None, lattice: FrequencyLattice | None = None) -> WeightedEnsemble:
    """Draw ``M`` weighted samples of the truncated Gibbs measure.

    Replica ``r`` of the ensemble uses stream replica ``r``; the pilot
    chains and the mixture fit depend only on the master seed.
    """
    if M < 1000:
        raise ValueError("ensembles need at least 1000 samples")
    if k < 2:
        raise ValueError("the Gibbs density needs degree k >= 2")
    if k % 2 == 0:
        raise ValueError("Gibbs ensembles need odd k (defocusing density)")
    seed = rng if isinstance(rng, int) else int(rng.master_seed)
    stream = RngStream.range(seed, M)
    lattice = gibbs_lattice(N, k) if lattice is None else lattice
    coords = Coordinates.of(N)
    alpha = alpha_closed_form(N)
    d = coords.dim
    blocks = (d + 3) // 4
    ids = np.arange(blocks, dtype=np.uint64)
    if proposal == "prior":
        z1 = stream.normals(Namespace.DATA, np.uint64(0), ids).reshape(M, -1)[:, :d]
        log_q = _std_logpdf(z1)
    elif proposal == "mixture":
        S = pilot_chain(coords, lattice, k, alpha, seed, **(pilot or {}))
        S = np.concatenate([S, -S])
        mix = MixtureProposal.fit(S, components, seed=seed % (2**32))
        z1 = mix.sample(stream, d)
        log_q = mix.logpdf(z1)
    else:
        raise ValueError("proposal must be 'mixture' or 'prior'")
    z2 = stream.normals(Namespace.DATA, np.uint64(1), ids).reshape(M, -1)[:, :d]
    log_R = _log_R_coords(z1, coords, lattice, k, alpha)
    log_w = log_R + _std_logpdf(z1) - log_q
    u1 = coords.to_coeffs(z1, coords.u1_scale)
    u2 = coords.to_coeffs(z2, coords.u2_scale)
    # one mode beyond the band, drawn from its Gaussian marginal
    sf = _sentinel(N)
    sid = mode_ids(sf)
    g = stream.normals(Namespace.DATA, np.uint64(2), sid)[:, 0]
    jb = np.sqrt(1.0 + float((sf**2).sum()))
    s1 = (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0) / jb
    s2 = (g[:, 2] + 1j * g[:, 3]) / np.sqrt(2.0)
    ens = WeightedEnsemble(N, k, coords, lattice, u1, u2, log_w, log_R, stream, proposal, (sf[0], s1, s2))
    if ens.warning:
        warnings.warn(ens.warning, LowESSWarning, stacklevel=2)
    return ens


# --------------------------------------------------------------------------- invariance test

Observable = Callable[[np.ndarray, np.ndarray, "WeightedEnsemble"], np.ndarray]


def default_observables(ens: WeightedEnsemble) -> dict[str, Observable]:
    """``|u1(n)|^2``, ``|u2(n)|^2`` per representative and the Wick potential."""
    obs: dict[str, Observable] = {}
    for i, n in enumerate(ens.coords.modes.freqs):
        tag = f"({n[0]},{n[1]})"
        obs[f"|u1{tag}|^2"] = lambda a, b, e, i=i: np.abs(a[:, i]) ** 2
        obs[f"|u2{tag}|^2"] = lambda a, b, e, i=i: np.abs(b[:, i]) ** 2

    def potential(a, b, e):
        g = _to_grid(e.coords.modes.scatter(a, e.lattice), e.lattice.M)
        return np.mean(hermite(e.k + 1, g, e.alpha) * np.ones_like(g), axis=(-2, -1))

    obs[f"int :u^{ens.k + 1}:"] = potential
    return obs


@dataclass
class InvarianceRow:
    observable: str
    t0_mean: float
    t0_se: float
    tT_mean: float
    tT_se: float
    z: float
    ess: float
    excluded: int
    t: float = 0.0
    reference: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "observable": self.observable,
            "t0_mean": self.t0_mean,
            "t0_se": self.t0_se,
            "tT_mean": self.tT_mean,
            "tT_se": self.tT_se,
            "z": self.z,
            "ess": self.ess,
            "excluded": self.excluded,
        })


@dataclass
class InvarianceReport:
    rows: list[InvarianceRow]
    excluded: int
    size: int
    ess: float
    z_max: float = 4.0
    max_excluded_fraction: float = 0.01
    shifted: list[InvarianceRow] = field(default_factory=list)

    @property
    def excluded_fraction(self) -> float:
        return self.excluded / self.size

    @property
    def passed(self) -> bool:
        rows = self.rows + self.shifted
        return all(abs(r.z) < self.z_max for r in rows) and self.excluded_fraction < self.max_excluded_fraction

    def ndjson(self) -> list[str]:
        return [r.to_json() for r in self.rows + self.shifted]


def _evolve_chunk(u1, u2, s1, s2, reps, seed, integ: SplitIntegrator, steps, record):
    """Evolve one chunk of samples; returns states at the record steps and a finite mask."""
    rng = RngStream(seed, reps)
    K = integ.K
    a = np.concatenate([u1, s1[:, None]], axis=1)
    b = np.concatenate([u2, s2[:, None]], axis=1)
    ok = np.ones(len(reps), dtype=bool)
    out = {}

    def snap():
        return (a[:, :K].copy(), b[:, :K].copy(), a[:, K].copy(), b[:, K].copy())

    if 0 in record:
        out[0] = snap()
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            a, b = integ.step(a, b, rng, j)
            fin = np.isfinite(a).all(axis=1) & np.isfinite(b).all(axis=1) & (np.abs(a).max(axis=1) < 1e12)
            if not fin.all():
                ok &= fin
                a = np.where(ok[:, None], a, 0.0)
                b = np.where(ok[:, None], b, 0.0)
            if j + 1 in record:
                out[j + 1] = snap()
    return out, ok


def invariance_test(
    ens: WeightedEnsemble,
    T: float,
    observables: dict[str, Observable] | None = None,
    h: float = 1e-3,
    threads: int = 1,
    chunk: int = 2048,
    nonlinear: bool = True,
    ou: bool = True,
    hamiltonian: bool = True,
    unit_weights: bool = False,
    shift_from: float | None = None,
    sentinel: bool = True,
    z_max: float = 4.0,
) -> InvarianceReport:
    """Evolve every sample by the split dynamics to ``T`` and compare weighted means.

    Each row holds the weighted means at ``t = 0`` and ``t = T`` and the
    z-score of the paired difference ``f(X_T) - f(X_0)``.  With
    ``shift_from`` a second set of rows compares ``t = shift_from`` with
    ``t = T``.  Samples that overflow are excluded and counted.  Chunks
    of samples are independent, so results do not depend on ``threads``.
    """
    steps = int(round(T / h))
    if abs(steps * h - T) > 1e-9 * T:
        raise ValueError("T must be an integer multiple of h")
    _check_gibbs_grid(ens.lattice, ens.N, ens.k)
    observables = default_observables(ens) if observables is None else dict(observables)
    s_freq, s1, s2 = ens.sentinel
    js = steps if shift_from is None else int(round(shift_from / h))
    record = sorted({0, js, steps})
    reps = ens.rng.replicas
    bounds = [(i, min(i + chunk, ens.size)) for i in range(0, ens.size, chunk)]

    integ = SplitIntegrator(ens.lattice, ens.N, ens.k, ens.alpha, h, nonlinear, ou, hamiltonian, extra=s_freq)

    def work(b):
        lo, hi = b
        return _evolve_chunk(ens.u1[lo:hi], ens.u2[lo:hi], s1[lo:hi], s2[lo:hi], reps[lo:hi], int(ens.rng.master_seed), integ, steps, record)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    states = {j: tuple(np.concatenate([p[0][j][q] for p in parts]) for q in range(4)) for j in record}
    ok = np.concatenate([p[1] for p in parts])
    lw = np.zeros(ens.size) if unit_weights else ens.log_weights
    lw = np.where(ok, lw, -np.inf)
    w = np.exp(lw - lw.max())
    w = w / w.sum()
    ess = float(1.0 / np.sum(w * w))
    if sentinel:
        jb2 = 1.0 + float((s_freq**2).sum())
        observables[f"sentinel <n>^2|u1({s_freq[0]},{s_freq[1]})|^2"] = ("sentinel", lambda a, b: jb2 * np.abs(a) ** 2)
        observables[f"sentinel |u2({s_freq[0]},{s_freq[1]})|^2"] = ("sentinel", lambda a, b: np.abs(b) ** 2)

    def evaluate(f, j):
        a, b, c, d = states[j]
        if isinstance(f, tuple):
            return f[1](c, d)
        return f(a, b, ens)

    def row(name, f, ja, jb):
        fa = np.where(ok, evaluate(f, ja), 0.0)
        fb = np.where(ok, evaluate(f, jb), 0.0)
        ma, mb = float(w @ fa), float(w @ fb)
        sa = float(np.sqrt(np.sum(w * w * (fa - ma) ** 2)))
        sb = float(np.sqrt(np.sum(w * w * (fb - mb) ** 2)))
        diff = fb - fa
        md = mb - ma
        sd = float(np.sqrt(np.sum(w * w * (diff - md) ** 2)))
        z = md / sd if sd > 0 else (0.0 if md == 0 else np.inf)
        return InvarianceRow(name, ma, sa, mb, sb, float(z), ess, int((~ok).sum()), jb * h, ja * h)

    rows = [row(name, f, 0, steps) for name, f in observables.items()]
    shifted = []
    if shift_from is not None:
        shifted = [row(f"{name} [t={shift_from:g}]", f, js, steps) for name, f in observables.items()]
    return InvarianceReport(rows, int((~ok).sum()), ens.size, ess, z_max, shifted=shifted)
