"""Nonlinear evolution of the renormalized equation.

Two equations are integrated pseudospectrally:

* the remainder equation ``v = u - Psi``,

      v'' + (1 - Delta) v + D v' + P_B sum_l C(k,l) Xi_l v^{k-l} = 0,

  driven by the Wick powers ``Xi_l`` of the stochastic convolution, with
  ``v`` kept in a band ``B`` (``B = N`` gives the fully truncated system);

* the truncated ``u``-dynamics for the Gibbs measure, split into an
  undamped Hamiltonian part and an Ornstein-Uhlenbeck part.

The linear part is always exact (:mod:`svnlw.linflow`); the Duhamel
integral of the nonlinearity is approximated by exponential quadrature.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .harness.fits import LineFit, upper_envelope
from .linflow import FlowState, ModeRates, flow_matrix, forcing_response, linear_forcing_response
from .noise import ModeSet, PathSampler, sigma_closed_form
from .rng import Namespace, RngStream
from .spectral import (
    BESSEL,
    FrequencyLattice,
    SpectralField,
    _from_grid,
    _to_grid,
    mode_ids,
    required_grid,
)
from .wick import DealiasingError, EnhancedDataSet, hermite, hermite_table, renorm_grid

__all__ = [
    "SolverConfig",
    "BlowupError",
    "EnergyRecord",
    "PicardResult",
    "CubicRun",
    "StreamingWickSeries",
    "StoredWickSeries",
    "step_v",
    "integrate",
    "picard_solve",
    "energy",
    "dissipation",
    "b_diagnostic",
    "evolve_cubic",
    "split_step_full",
    "SplitIntegrator",
    "hamiltonian_EN",
    "BLOWUP_THRESHOLD",
]

BLOWUP_THRESHOLD = 1e12
SCHEMES = ("exp-euler", "exp-midpoint")


class BlowupError(RuntimeError):
    """Field values overflowed; carries the last finite state."""

    def __init__(self, message: str, last_state: FlowState | None = None, t: float | None = None):
        super().__init__(message)
        self.last_state = last_state
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one remainder-equation integration.

    ``band`` is the band of ``v`` (``None`` means ``N``); ``M`` the grid
    size (``None`` picks the smallest dealiasing grid for the products
    read back on ``|n| <= band``).
    """

    k: int = 3
    N: int = 8
    h: float = 1e-3
    T: float = 1.0
    scheme: str = "exp-midpoint"
    band: int | None = None
    M: int | None = None
    damping: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 < self.h <= self.T:
            raise ValueError("need 0 < h <= T")
        if self.k < 1:
            raise ValueError("degree k must be positive")
        if self.M is not None and self.M < self.min_grid:
            raise DealiasingError(f"grid M={self.M} too small; need M >= {self.min_grid}")

    @property
    def v_band(self) -> int:
        return self.N if self.band is None else self.band

    @property
    def min_grid(self) -> int:
        B = self.v_band
        # nonlinearity read back on the v band, potential energy integrated
        return max(required_grid(max(B, self.N), self.k, B), required_grid(B, self.k + 1, 0))

    def lattice(self) -> FrequencyLattice:
        return FrequencyLattice(self.M or self.min_grid, self.v_band)

    @property
    def steps(self) -> int:
        n = int(round(self.T / self.h))
        if abs(n * self.h - self.T) > 1e-9 * self.T:
            raise ValueError("T must be an integer multiple of h")
        return n


# --------------------------------------------------------------------------- Wick series sources


class WickSeries(Protocol):
    """Supplies ``[Xi_1, ..., Xi_k]`` grid values along a uniform time grid."""

    def start(self) -> list[np.ndarray]: ...

    def step(self, j: int) -> tuple[list[np.ndarray] | None, list[np.ndarray]]: ...


class StreamingWickSeries:
    """Wick powers of a stochastic convolution sampled step by step.

    Equivalent to sampling the whole path with
    :func:`svnlw.noise.sample_psi_path` (``midpoints=True``) and reading it
    node by node, without storing the path.  ``variance='sigma'`` uses
    ``sigma_N(t)``.
    """

    def __init__(self, N: int, rng: RngStream, k: int, lattice: FrequencyLattice, h: float, midpoints: bool = True, zero: bool = False):
        self.N, self.k, self.lattice, self.h = N, k, lattice, float(h)
        self.modes = ModeSet.disc(N)
        self.sampler = PathSampler(self.modes, rng)
        self.midpoints = midpoints
        self.zero = zero
        self.R = len(rng)
        self.current_psi = np.zeros((self.R, len(self.modes)), np.complex128)

    def _xi(self, psi, t):
        if self.zero:
            z = np.zeros((self.R,) + self.lattice.shape)
            return [z] * self.k
        g = _to_grid(self.modes.scatter(psi, self.lattice), self.lattice.M)
        return hermite_table(self.k, g, sigma_closed_form(t, self.N))[1:]

    def psi_grid(self) -> np.ndarray:
        return _to_grid(self.modes.scatter(self.current_psi, self.lattice), self.lattice.M)

    def start(self):
        return self._xi(self.current_psi, 0.0)

    def step(self, j: int):
        x0 = (self.sampler.psi.copy(), self.sampler.dpsi.copy())
        x1 = self.sampler.advance(self.h, j)
        mid = None
        if self.midpoints:
            m = self.sampler.bridge(x0, x1, self.h, j)
            mid = self._xi(m[0], (j + 0.5) * self.h)
        self.current_psi = x1[0]
        return mid, self._xi(x1[0], (j + 1) * self.h)


class StoredWickSeries:
    """Adapter reading an :class:`EnhancedDataSet` on a uniform grid."""

    def __init__(self, enh: EnhancedDataSet, h: float):
        self.enh, self.h = enh, float(h)

    def _node(self, t):
        try:
            return self.enh.index_of_time(t)
        except KeyError:
            return None

    def _xi(self, t):
        if self.enh.path is None:
            z = np.zeros(self.enh.data.v.coeffs.shape)
            return [z] * self.enh.k
        j = self._node(t)
        if j is None:
            raise KeyError(f"enhanced data has no node at t={t}")
        return self.enh.xi(j)

    def start(self):
        return self._xi(0.0)

    def step(self, j: int):
        tm = (j + 0.5) * self.h
        mid = self._xi(tm) if (self.enh.path is None or self._node(tm) is not None) else None
        return mid, self._xi((j + 1) * self.h)


# --------------------------------------------------------------------------- remainder equation


class _Kernel:
    """Per-lattice flow matrices and quadrature weights for a fixed step."""

    def __init__(self, cfg: SolverConfig, lattice: FrequencyLattice):
        self.cfg = cfg
        self.lattice = lattice
        rates = ModeRates.on(lattice, cfg.damping)
        h = cfg.h
        self.G = flow_matrix(rates, h)
        self.Gh = flow_matrix(rates, 0.5 * h)
        self.P = forcing_response(rates, h)
        self.Ph = forcing_response(rates, 0.5 * h)
        self.W = linear_forcing_response(rates, h)
        self.mask = lattice.mask(cfg.v_band)

    def force(self, vc: np.ndarray, xis) -> tuple[np.ndarray, np.ndarray]:
        """Projected renormalized nonlinearity (coefficients) and sup|v|."""
        vg = _to_grid(vc, self.lattice.M)
        sup = np.max(np.abs(vg), axis=(-2, -1))
        f = _from_grid(renorm_grid(vg, xis, self.cfg.k), self.lattice)
        return np.where(self.mask, f, 0.0), sup

    @staticmethod
    def _push(g, p, v, vt, f):
        a, b = g.apply(v, vt)
        return a - p[0] * f, b - p[1] * f

    def step(self, v, vt, xi_left, xi_mid, xi_right=None):
        f0, sup = self.force(v, xi_left)
        if self.cfg.scheme == "exp-euler":
            return (*self._push(self.G, self.P, v, vt, f0), sup)
        if xi_mid is None:
            raise ValueError("exp-midpoint needs Wick powers at the half step")
        hv, hvt = self._push(self.Gh, self.Ph, v, vt, f0)
        fm, _ = self.force(hv, xi_mid)
        return (*self._push(self.G, self.P, v, vt, fm), sup)


def _check_state(state: FlowState, lattice: FrequencyLattice):
    if state.lattice.M != lattice.M:
        raise DealiasingError(f"state lives on M={state.lattice.M}, solver needs M={lattice.M}")


def step_v(state: FlowState, xi, cfg: SolverConfig) -> FlowState:
    """One exponential-integrator step of the remainder equation.

    ``xi`` is ``Xi_left`` (a list of ``k`` grid arrays) for
    ``exp-euler`` and ``(Xi_left, Xi_mid)`` for ``exp-midpoint``.
    Raises :class:`BlowupError` on overflow.
    """
    lat = state.lattice
    ker = _Kernel(cfg, lat)
    if cfg.scheme == "exp-euler":
        left, mid = (xi[0], None) if isinstance(xi, tuple) else (xi, None)
    else:
        left, mid = xi
    v, vt, sup = ker.step(state.v.coeffs, state.vt.coeffs, left, mid)
    bad = ~np.isfinite(v).all(axis=(-2, -1)) | ~np.isfinite(vt).all(axis=(-2, -1)) | (sup > BLOWUP_THRESHOLD)
    if np.any(bad):
        raise BlowupError(f"non-finite or overflowing field at t={state.t + cfg.h:g}", state, state.t)
    return FlowState(SpectralField(lat, v), SpectralField(lat, vt), state.t + cfg.h)


@dataclass
class Trajectory:
    """Recorded states of a batched run, with per-replica completion status."""

    times: np.ndarray
    v: np.ndarray  # (J, R, M, M)
    vt: np.ndarray
    lattice: FrequencyLattice
    status: list[str]
    blowup_time: np.ndarray
    last_finite: FlowState
    sup: np.ndarray  # (J, R)

    def state(self, j: int) -> FlowState:
        return FlowState(SpectralField(self.lattice, self.v[j]), SpectralField(self.lattice, self.vt[j]), float(self.times[j]))

    @property
    def completed(self) -> np.ndarray:
        return np.array([s == "completed" for s in self.status])


def integrate(data: FlowState, source: WickSeries, cfg: SolverConfig, record_every: int = 1, callback=None) -> Trajectory:
    """March the remainder equation over ``[0, T]`` for a batch of replicas.

    Replicas that overflow are frozen at their last finite state and
    reported as ``blowup``; the others continue.  ``callback(j, t, v,
    vt, xi)`` is invoked at recorded nodes.
    """
    lat = data.lattice
    ker = _Kernel(cfg, lat)
    v, vt = data.v.coeffs.copy(), data.vt.coeffs.copy()
    batch = v.shape[:-2]
    alive = np.ones(batch, dtype=bool)
    tblow = np.full(batch, np.nan)
    last_v, last_vt = v.copy(), vt.copy()
    xi = source.start()
    times, vs, vts, sups = [], [], [], []

    def record(j, t, sup):
        times.append(t)
        vs.append(np.where(alive[..., None, None], v, last_v))
        vts.append(np.where(alive[..., None, None], vt, last_vt))
        sups.append(sup)
        if callback is not None:
            callback(j, t, v, vt, xi)

    n = cfg.steps
    sup0 = np.max(np.abs(_to_grid(v, lat.M)), axis=(-2, -1))
    record(0, 0.0, sup0)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n):
            mid, right = source.step(j)
            nv, nvt, sup = ker.step(v, vt, xi, mid)
            ok = np.isfinite(nv).all(axis=(-2, -1)) & np.isfinite(nvt).all(axis=(-2, -1)) & (sup <= BLOWUP_THRESHOLD)
            newly = alive & ~ok
            tblow[newly] = j * cfg.h
            alive &= ok
            last_v = np.where(alive[..., None, None], nv, last_v)
            last_vt = np.where(alive[..., None, None], nvt, last_vt)
            v = np.where(alive[..., None, None], nv, 0.0)
            vt = np.where(alive[..., None, None], nvt, 0.0)
            xi = right
            if (j + 1) % record_every == 0 or j + 1 == n:
                supn = np.max(np.abs(_to_grid(last_v, lat.M)), axis=(-2, -1))
                record(j + 1, (j + 1) * cfg.h, supn)
    status = ["completed" if a else "blowup" for a in np.ravel(alive)]
    last = FlowState(SpectralField(lat, last_v), SpectralField(lat, last_vt), n * cfg.h)
    return Trajectory(np.array(times), np.stack(vs), np.stack(vts), lat, status, tblow, last, np.stack(sups))


@dataclass
class PicardResult:
    times: np.ndarray
    v: np.ndarray  # (J+1 nodes, ..., M, M) of the last iterate
    vt: np.ndarray
    increments: list[float]
    lattice: FrequencyLattice

    @property
    def ratios(self) -> np.ndarray:
        d = np.asarray(self.increments)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]

    @property
    def diverged(self) -> bool:
        d = self.increments
        return len(d) >= 3 and (not np.isfinite(d[-1]) or d[-1] > d[-2] > d[-3])

    def state(self, j: int) -> FlowState:
        return FlowState(SpectralField(self.lattice, self.v[j]), SpectralField(self.lattice, self.vt[j]), float(self.times[j]))


def _h1_l2(lattice, dv, dvt):
    w = BESSEL(lattice) ** 2
    return np.sqrt(np.sum(w * np.abs(dv) ** 2 + np.abs(dvt) ** 2, axis=(-2, -1)))


def picard_solve(data: FlowState, xi: EnhancedDataSet | None, T: float, iterations: int, cfg: SolverConfig, tol: float = 0.0) -> PicardResult:
    """Fixed-point iteration of the Duhamel map on the grid ``t_m = m h``.

    Iterate 0 is the linear evolution of the data.  Each sweep evaluates
    the nonlinearity of the previous iterate at the nodes and integrates
    its piecewise-linear interpolant exactly against the propagator.
    Increments are ``max_m ||v^{j+1}(t_m) - v^j(t_m)||_{H^1 x L^2}``,
    maximized over replicas.  Divergence is reported, not raised.
    """
    cfg = replace(cfg, T=T)
    lat = data.lattice
    ker = _Kernel(cfg, lat)
    n = cfg.steps
    if xi is None:
        xis = [[np.zeros(data.v.coeffs.shape)] * cfg.k for _ in range(n + 1)]
    else:
        src = StoredWickSeries(xi, cfg.h)
        xis = [src._xi(m * cfg.h) for m in range(n + 1)]
    (w00, w01), (w10, w11) = ker.W
    v = [data.v.coeffs]
    vt = [data.vt.coeffs]
    for m in range(n):
        a, b = ker.G.apply(v[-1], vt[-1])
        v.append(a)
        vt.append(b)
    v, vt = np.stack(v), np.stack(vt)
    incs = []
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(iterations):
            F = np.stack([ker.force(v[m], xis[m])[0] for m in range(n + 1)])
            nv, nvt = np.empty_like(v), np.empty_like(vt)
            nv[0], nvt[0] = v[0], vt[0]
            for m in range(n):
                a, b = ker.G.apply(nv[m], nvt[m])
                nv[m + 1] = a - w00 * F[m] - w01 * F[m + 1]
                nvt[m + 1] = b - w10 * F[m] - w11 * F[m + 1]
            d = float(np.max(_h1_l2(lat, nv - v, nvt - vt)))
            incs.append(d)
            v, vt = nv, nvt
            if not np.isfinite(d) or d <= tol:
                break
    return PicardResult(np.arange(n + 1) * cfg.h, v, vt, incs, lat)


# --------------------------------------------------------------------------- energy and diagnostics


@dataclass
class EnergyRecord:
    """Energy time series with its components; arrays are ``(J, ...batch)``."""

    times: np.ndarray
    E: np.ndarray
    grad: np.ndarray
    kin: np.ndarray
    pot: np.ndarray
    sup_norm: np.ndarray | None = None
    B: np.ndarray | None = None

    def write_csv(self, path, replica: int | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["t", "E", "E_grad", "E_kin", "E_pot", "sup_norm"]
            if replica is None and self.E.ndim > 1:
                cols = ["replica"] + cols
            w.writerow(cols)
            reps = [replica] if (replica is not None or self.E.ndim == 1) else range(self.E.shape[1])
            for r in reps:
                for j, t in enumerate(self.times):
                    sel = (j,) if (self.E.ndim == 1) else (j, r)
                    sup = self.sup_norm[sel] if self.sup_norm is not None else float("nan")
                    row = [repr(float(t)), repr(float(self.E[sel])), repr(float(self.grad[sel])), repr(float(self.kin[sel])), repr(float(self.pot[sel])), repr(float(sup))]
                    w.writerow(([r] if len(cols) == 7 else []) + row)


def energy(state: FlowState, k: int):
    """Energy ``1/2 ||v||_{H^1}^2 + 1/2 ||v_t||^2 + 1/(k+1) int v^{k+1}``.

    Returns ``(E, grad, kin, pot)`` with batch shape.  The quadratic terms
    are spectral sums; the potential is a grid mean, exact when the grid
    resolves degree ``k+1`` products integrated over the torus.
    """
    from .wick import band_of

    lat = state.lattice
    B = band_of(state.v)
    need = required_grid(B, k + 1, 0)
    if lat.M < need:
        raise DealiasingError(f"energy at band {B}, degree {k + 1} needs M >= {need}")
    w = BESSEL(lat) ** 2
    grad = 0.5 * np.sum(w * np.abs(state.v.coeffs) ** 2, axis=(-2, -1))
    kin = 0.5 * np.sum(np.abs(state.vt.coeffs) ** 2, axis=(-2, -1))
    g = _to_grid(state.v.coeffs, lat.M)
    pot = np.mean(g ** (k + 1), axis=(-2, -1)) / (k + 1)
    return grad + kin + pot, grad, kin, pot


def dissipation(state: FlowState) -> np.ndarray:
    """``||D^{1/2} v_t||^2 = sum |n| |v_t(n)|^2``."""
    return np.sum(state.lattice.absn * np.abs(state.vt.coeffs) ** 2, axis=(-2, -1))


def _negative_sup(grid: np.ndarray, lattice: FrequencyLattice, s: float) -> np.ndarray:
    c = _from_grid(grid, lattice) * BESSEL(lattice) ** s
    return np.max(np.abs(_to_grid(c, lattice.M)), axis=(-2, -1))


def b_increment(xis, psi_grid, lattice: FrequencyLattice, eps: float) -> np.ndarray:
    """Instantaneous value of ``1 + ||:Psi^2:||^2 + ||:Psi^3:||^2 + eps ||Psi||^2`` in grid-max norms."""
    a = _negative_sup(xis[1], lattice, -0.5) ** 2
    b = _negative_sup(xis[2], lattice, -0.5) ** 2
    c = eps * _negative_sup(psi_grid, lattice, -eps) ** 2
    return 1.0 + a + b + c


def b_diagnostic(source, eps: float = 0.1, lattice: FrequencyLattice | None = None, upto: float | None = None) -> np.ndarray:
    """Running ``B(t_j)``: the sup over recorded times of :func:`b_increment`.

    ``source`` is an :class:`EnhancedDataSet` with ``k >= 3`` (or ``None``
    path for the zero path).  Norms are grid maxima on ``lattice``;
    returns shape ``(J, replicas)``, nondecreasing in ``j``.
    """
    enh = source
    lattice = enh.lattice if lattice is None else lattice
    if enh.k < 3:
        raise ValueError("the diagnostic needs Wick powers up to degree 3")
    vals = []
    for j, t in enumerate(enh.time_grid):
        if upto is not None and t > upto + 1e-12:
            break
        if enh.path is not None and enh.path.coarse is not None and not enh.path.coarse[j]:
            continue
        xis = enh.xi(j)
        vals.append(b_increment(xis, enh.base(j), lattice, eps))
    return np.maximum.accumulate(np.stack(vals), axis=0)


@dataclass
class CubicRun:
    record: EnergyRecord
    traj: Trajectory
    B: np.ndarray  # (J, R) running diagnostic at recorded times
    envelopes: list[LineFit]
    C_shared: float

    @property
    def blowups(self) -> int:
        return int(sum(s == "blowup" for s in self.traj.status))

    def envelope_ok(self) -> np.ndarray:
        """Per replica: an affine upper envelope exists with slope ``<= C_shared * B(T)``."""
        bt = self.B[-1]
        return np.array([
            np.isfinite(e.slope) and np.isfinite(e.intercept) and e.slope <= self.C_shared * bt[r] * (1 + 1e-12) + 1e-15
            for r, e in enumerate(self.envelopes)
        ])

    def blowup_ndjson(self) -> list[str]:
        return [
            json.dumps({"replica": r, "status": s, "t": None if np.isnan(self.traj.blowup_time[r]) else float(self.traj.blowup_time[r])})
            for r, s in enumerate(self.traj.status)
        ]


def loglog_energy(E: np.ndarray) -> np.ndarray:
    return np.log(np.log(np.maximum(E, 0.0) + np.e))


def evolve_cubic(data: FlowState | None, N: int, T: float, cfg: SolverConfig, rng: RngStream, record_every: int = 10, eps: float = 0.1, zero_noise: bool = False) -> CubicRun:
    """Integrate the cubic remainder equation with streamed noise.

    Records the energy, the running diagnostic ``B`` and, per replica,
    the affine upper envelope of ``log log(E + e)``; the shared constant
    ``C`` is the smallest value with ``slope_r <= C B_r(T)`` for all
    replicas.
    """
    if cfg.k != 3:
        raise ValueError("evolve_cubic integrates the cubic equation (k = 3)")
    cfg = replace(cfg, N=N, T=T)
    lat = cfg.lattice()
    R = len(rng)
    if data is None:
        data = FlowState.zeros(lat, (R,))
    _check_state(data, lat)
    src = StreamingWickSeries(N, rng, 3, lat, cfg.h, midpoints=cfg.scheme == "exp-midpoint", zero=zero_noise)
    bvals = []

    def on_record(j, t, v, vt, xi):
        psi = np.zeros((R,) + lat.shape) if zero_noise else src.psi_grid()
        bvals.append(b_increment(xi, psi, lat, eps))

    traj = integrate(data, src, cfg, record_every, on_record)
    E, g, k_, p = energy(FlowState(SpectralField(lat, traj.v), SpectralField(lat, traj.vt)), 3)
    B = np.maximum.accumulate(np.stack(bvals), axis=0)
    rec = EnergyRecord(traj.times, E, g, k_, p, traj.sup, B)
    y = loglog_energy(E)
    envs = []
    for r in range(R):
        fit = upper_envelope(traj.times, y[:, r])
        envs.append(LineFit(max(fit.slope, 0.0), float(np.max(y[:, r] - max(fit.slope, 0.0) * traj.times)), fit.r2, fit.points))
    bt = B[-1]
    C = float(max(e.slope / bt[r] for r, e in enumerate(envs)))
    return CubicRun(rec, traj, B, envs, C)


# --------------------------------------------------------------------------- Gibbs-side split dynamics


def _check_gibbs_grid(lattice: FrequencyLattice, N: int, k: int):
    need = max(required_grid(N, k, N), required_grid(N, k + 1, 0))
    if lattice.M < need:
        raise DealiasingError(f"split dynamics at band {N}, degree {k} need M >= {need}")


class SplitIntegrator:
    """Strang splitting of the truncated Gibbs dynamics on representative modes.

    One step is: OU over ``h/2``, rotation over ``h/2``, the kick
    ``u2 <- u2 - h P_N H_k(P_N u1; alpha)``, rotation over ``h/2``, OU over
    ``h/2``.  The rotation is the exact flow of ``u'' + (1 - Delta) u = 0``;
    the OU update ``u2(n) <- e^{-|n|h/2} u2(n) + gamma_n`` is exact with
    ``E|gamma_n|^2 = 1 - e^{-|n|h}`` and leaves the zero mode alone.

    ``extra`` lists frequencies beyond the band that are co-evolved by the
    linear part only (they never enter the kick).  States are arrays
    ``(replicas, K)`` over the band representatives followed by ``extra``.
    Step ``j`` draws one block of four normals per mode from stream ``j``
    of the OU namespace; normals 0-1 feed the first half step, 2-3 the
    second.
    """

    def __init__(self, lattice: FrequencyLattice, N: int, k: int, alpha: float, h: float, nonlinear: bool = True, ou: bool = True, hamiltonian: bool = True, extra=None):
        _check_gibbs_grid(lattice, N, k)
        self.lattice, self.N, self.k, self.alpha, self.h = lattice, N, k, float(alpha), float(h)
        self.nonlinear, self.ou, self.hamiltonian = nonlinear, ou, hamiltonian
        self.modes = ModeSet.disc(N)
        freqs = self.modes.freqs if extra is None else np.concatenate([self.modes.freqs, np.asarray(extra).reshape(-1, 2)])
        self.freqs = freqs
        self.K = len(self.modes)
        self.ids = mode_ids(freqs)
        absn = np.sqrt((freqs.astype(np.float64) ** 2).sum(-1))
        w = np.sqrt(1.0 + absn**2)
        c, s = np.cos(0.5 * h * w), np.sin(0.5 * h * w)
        self.rot = (c, s / w, -w * s, c)
        self.decay = np.exp(-0.5 * h * absn)
        self.noise = np.where(absn > 0, np.sqrt(-np.expm1(-h * absn)), 0.0)

    def rotate(self, u1, u2):
        a, b, c, d = self.rot
        return a * u1 + b * u2, c * u1 + d * u2

    def force(self, u1):
        """``P_N H_k(P_N u1; alpha)`` on the band modes."""
        lat = self.lattice
        g = _to_grid(self.modes.scatter(u1[..., : self.K], lat), lat.M)
        f = _from_grid(hermite(self.k, g, self.alpha) * np.ones_like(g), lat)
        return self.modes.gather(f, lat)

    def kick(self, u1, u2):
        u2 = u2.copy()
        u2[..., : self.K] -= self.h * self.force(u1)
        return u1, u2

    def ou_half(self, u2, z2):
        g = (z2[..., 0] + 1j * z2[..., 1]) / np.sqrt(2.0)
        return self.decay * u2 + self.noise * g

    def step(self, u1, u2, rng: RngStream | None, j: int):
        z = rng.normals(Namespace.OU, np.uint64(j), self.ids) if (self.ou and rng is not None) else None
        if self.ou and z is None:
            u2 = self.decay * u2
        if z is not None:
            u2 = self.ou_half(u2, z[..., 0:2])
        if self.hamiltonian:
            u1, u2 = self.rotate(u1, u2)
            if self.nonlinear:
                u1, u2 = self.kick(u1, u2)
            u1, u2 = self.rotate(u1, u2)
        if self.ou and z is None:
            u2 = self.decay * u2
        if z is not None:
            u2 = self.ou_half(u2, z[..., 2:4])
        return u1, u2

    def energy(self, u1, u2):
        """``E_N`` of the band modes (see :func:`hamiltonian_EN`)."""
        lat = self.lattice
        m = self.modes
        return hamiltonian_EN(m.scatter(u1[..., : self.K], lat), m.scatter(u2[..., : self.K], lat), lat, self.N, self.k, self.alpha)


def split_step_full(u1, u2, lattice: FrequencyLattice, h: float, rng: RngStream | None, step: int, alpha: float, k: int, N: int, nonlinear: bool = True, ou: bool = True):
    """One split step on full-lattice coefficient arrays ``(..., M, M)`` band-limited to ``N``.

    Half OU step, Hamiltonian Strang step, half OU step; ``rng=None``
    applies only the deterministic parts.  Raises :class:`BlowupError` on
    overflow.
    """
    it = SplitIntegrator(lattice, N, k, alpha, h, nonlinear, ou)
    m = it.modes
    a, b = it.step(m.gather(u1, lattice), m.gather(u2, lattice), rng, step)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise BlowupError(f"non-finite state after split step {step}")
    return m.scatter(a, lattice), m.scatter(b, lattice)


def hamiltonian_EN(u1, u2, lattice: FrequencyLattice, N: int, k: int, alpha: float) -> np.ndarray:
    """``1/2 ||u1||_{H^1}^2 + 1/2 ||u2||^2 + 1/(k+1) int H_{k+1}(P_N u1; alpha)``.

    The last term equals ``-log R_N(u1)``.
    """
    mask = lattice.mask(N)
    w = BESSEL(lattice) ** 2
    quad = 0.5 * np.sum(np.where(mask, w * np.abs(u1) ** 2 + np.abs(u2) ** 2, 0.0), axis=(-2, -1))
    g = _to_grid(np.where(mask, u1, 0.0), lattice.M)
    pot = np.mean(hermite(k + 1, g, alpha) * np.ones_like(g), axis=(-2, -1)) / (k + 1)
    return quad + pot
