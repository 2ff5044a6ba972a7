"""Frequency lattice, real spectral fields and Fourier multipliers on the 2-torus.

A real field on the unit torus is stored by its complex Fourier
coefficients in numpy FFT order,

    f(x) = sum_n  c(n) exp(2 pi i n.x),     -M/2 < n_i <= M/2,

so the mean square of the grid values equals ``sum |c(n)|^2``.  Fourier
multipliers use the integer-lattice symbols (``D -> |n|``,
``1 - Delta -> 1 + |n|^2``), without factors of 2 pi.  Coefficient
arrays may carry leading batch axes, e.g. ``(replicas, M, M)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "FrequencyLattice",
    "SpectralField",
    "MultiplierSymbol",
    "D",
    "BESSEL",
    "MODIFIED",
    "make_lattice",
    "required_grid",
    "transform",
    "inverse_transform",
    "apply_multiplier",
    "project",
    "sobolev_norm",
    "resample",
    "HermitianSymmetryError",
]

SYMMETRY_TOL = 1e-10


class HermitianSymmetryError(ValueError):
    """Coefficients do not describe a real field."""


def required_grid(band: int, degree: int = 1, target_band: int | None = None) -> int:
    """Smallest even grid size that evaluates a degree-``degree`` product exactly.

    With ``target_band=None`` every Fourier mode of the product is exact,
    which needs ``M >= 2 (degree*band + 1)``.  When the product is only
    read back on ``|n| <= target_band`` (a projection or an integral),
    aliasing is harmless as long as ``M > degree*band + target_band``.
    """
    need = 2 * (degree * band + 1)
    if target_band is not None:
        need = min(need, degree * band + target_band + 1)
    need = max(need, 2 * (band + 1), 4)
    return need + (need % 2)


@dataclass(frozen=True)
class FrequencyLattice:
    """Grid of ``M x M`` points and the matching Fourier modes.

    ``N`` is the band limit (Euclidean, ``|n| <= N``) of the fields that
    live on the lattice; ``None`` means no band limit beyond the grid.
    """

    M: int
    N: int | None = None

    def __post_init__(self):
        if self.M % 2 or self.M < 4:
            raise ValueError(f"grid size must be even and >= 4, got {self.M}")
        if self.N is not None and (self.N < 0 or self.M < 2 * (self.N + 1)):
            raise ValueError(
                f"grid size {self.M} cannot hold band limit {self.N}; "
                f"need M >= {2 * (self.N + 1)}"
            )

    def with_band(self, N: int | None) -> "FrequencyLattice":
        return FrequencyLattice(self.M, N)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.M)

    @cached_property
    def n1(self) -> np.ndarray:
        k = np.fft.fftfreq(self.M, 1.0 / self.M).astype(np.int64)
        k[self.M // 2] = self.M // 2
        return np.broadcast_to(k[:, None], self.shape)

    @cached_property
    def n2(self) -> np.ndarray:
        return self.n1.T

    @cached_property
    def norm2(self) -> np.ndarray:
        """``|n|^2`` as float."""
        return (self.n1**2 + self.n2**2).astype(np.float64)

    @cached_property
    def absn(self) -> np.ndarray:
        return np.sqrt(self.norm2)

    @cached_property
    def nyquist(self) -> np.ndarray:
        """Modes without a partner in the index set; always held at zero."""
        h = self.M // 2
        return (self.n1 == h) | (self.n2 == h)

    @cached_property
    def band_mask(self) -> np.ndarray:
        mask = ~self.nyquist
        if self.N is not None:
            mask = mask & (self.norm2 <= self.N**2)
        return mask

    def mask(self, N: int | None) -> np.ndarray:
        """Indicator of ``|n| <= N`` (Nyquist modes excluded)."""
        if N is None:
            return ~self.nyquist
        return (~self.nyquist) & (self.norm2 <= N * N)

    @cached_property
    def conj_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays mapping each mode to its negative ``-n``."""
        i = (-np.arange(self.M)) % self.M
        return np.meshgrid(i, i, indexing="ij")

    def representatives(self, N: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Half-lattice representatives (n1 > 0, or n1 == 0 and n2 >= 0) in the band.

        Returned as flat index arrays into the ``M x M`` layout, ordered by
        ``(|n|^2, n1, n2)``, zero mode first.
        """
        n1, n2 = self.n1, self.n2
        half = (n1 > 0) | ((n1 == 0) & (n2 >= 0))
        sel = np.flatnonzero((half & self.mask(N)).ravel())
        order = np.lexsort((n2.ravel()[sel], n1.ravel()[sel], self.norm2.ravel()[sel]))
        sel = sel[order]
        return np.unravel_index(sel, self.shape)

    def frequency_of(self, index) -> np.ndarray:
        i, j = index
        return np.stack([self.n1[i, j], self.n2[i, j]], axis=-1)

    def index_of(self, n) -> tuple[int, int]:
        n = np.asarray(n)
        return int(n[0] % self.M), int(n[1] % self.M)


def make_lattice(M: int, N: int | None = None) -> FrequencyLattice:
    """Build a lattice, rejecting odd ``M`` and ``M < 2(N+1)``."""
    return FrequencyLattice(int(M), None if N is None else int(N))


def mode_ids(freqs: np.ndarray) -> np.ndarray:
    """Lattice-independent 64-bit identifier of each frequency pair."""
    freqs = np.asarray(freqs, dtype=np.int64)
    a = (freqs[..., 0] % 2**32).astype(np.uint64)
    b = (freqs[..., 1] % 2**32).astype(np.uint64)
    return (a << np.uint64(32)) | b


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real field, shape ``batch + (M, M)``."""

    lattice: FrequencyLattice
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape[-2:] != self.lattice.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match lattice {self.lattice.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, lattice: FrequencyLattice, batch: tuple[int, ...] = ()) -> "SpectralField":
        return cls(lattice, np.zeros(batch + lattice.shape, dtype=np.complex128))

    @classmethod
    def from_modes(cls, lattice: FrequencyLattice, modes: dict) -> "SpectralField":
        """Field with ``coeff(n) = a`` and ``coeff(-n) = conj(a)`` for each ``n: a``."""
        c = np.zeros(lattice.shape, dtype=np.complex128)
        for n, a in modes.items():
            i = lattice.index_of(n)
            j = lattice.index_of(-np.asarray(n))
            c[i] = a
            c[j] = np.conj(a)
            if i == j:
                c[i] = a.real if isinstance(a, complex) else a
        return cls(lattice, c)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-2]

    def coeff(self, n) -> np.ndarray:
        return self.coeffs[(...,) + self.lattice.index_of(n)]

    def symmetry_defect(self) -> float:
        i, j = self.lattice.conj_index
        c = self.coeffs
        scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
        return float(np.max(np.abs(c - np.conj(c[..., i, j])), initial=0.0)) / scale

    def is_hermitian(self, tol: float = SYMMETRY_TOL) -> bool:
        return self.symmetry_defect() <= tol

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs - other.coeffs)

    def __mul__(self, a) -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs * np.asarray(a)[..., None, None])

    __rmul__ = __mul__


def _to_grid(coeffs: np.ndarray, M: int) -> np.ndarray:
    half = coeffs[..., : M // 2 + 1]
    return np.fft.irfft2(half, s=(M, M)) * (M * M)


def _from_grid(values: np.ndarray, lattice: FrequencyLattice) -> np.ndarray:
    M = lattice.M
    half = np.fft.rfft2(values) / (M * M)
    out = np.empty(values.shape[:-2] + (M, M), dtype=np.complex128)
    out[..., : M // 2 + 1] = half
    i, j = lattice.conj_index
    cols = slice(M // 2 + 1, M)
    out[..., cols] = np.conj(half[..., i[:, cols], j[:, cols]])
    out[..., lattice.nyquist] = 0.0
    out[..., 0, 0] = out[..., 0, 0].real
    return out


def transform(field: SpectralField, check: bool = True) -> np.ndarray:
    """Real grid values ``f(j/M, k/M)`` of a spectral field."""
    if check and not field.is_hermitian():
        raise HermitianSymmetryError(
            f"coefficients violate coeff(-n) = conj(coeff(n)) (defect {field.symmetry_defect():.2e})"
        )
    return _to_grid(field.coeffs, field.lattice.M)


def inverse_transform(values: np.ndarray, lattice: FrequencyLattice) -> SpectralField:
    """Spectral field of real grid values; Nyquist modes are dropped."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2:] != lattice.shape:
        raise ValueError(f"grid shape {values.shape[-2:]} does not match lattice {lattice.shape}")
    return SpectralField(lattice, _from_grid(values, lattice))


@dataclass(frozen=True)
class MultiplierSymbol:
    """Even real symbol ``n -> m(|n|)`` acting diagonally on coefficients."""

    name: str
    radial: Callable[[np.ndarray], np.ndarray]

    def __call__(self, lattice: FrequencyLattice) -> np.ndarray:
        return self.radial(lattice.absn)

    def __pow__(self, s: float) -> "MultiplierSymbol":
        f = self.radial
        if s == 0:
            return MultiplierSymbol(f"{self.name}^0", np.ones_like)

        def g(r):
            with np.errstate(divide="ignore"):
                return f(r) ** s

        return MultiplierSymbol(f"{self.name}^{s:g}", g)

    def __mul__(self, other: "MultiplierSymbol") -> "MultiplierSymbol":
        f, g = self.radial, other.radial
        return MultiplierSymbol(f"{self.name}*{other.name}", lambda r: f(r) * g(r))


D = MultiplierSymbol("D", lambda r: r)
BESSEL = MultiplierSymbol("<n>", lambda r: np.sqrt(1.0 + r * r))
MODIFIED = MultiplierSymbol("<<n>>", lambda r: np.sqrt(1.0 + 0.75 * r * r))


def apply_multiplier(sym: MultiplierSymbol, f: SpectralField) -> SpectralField:
    m = sym(f.lattice)
    return SpectralField(f.lattice, f.coeffs * m)


def project(N: int | None, f: SpectralField) -> SpectralField:
    """Frequency cutoff onto ``|n| <= N``; ``N=None`` is the identity."""
    if N is None:
        return f
    lat = f.lattice
    new = lat if (lat.N is not None and lat.N <= N) else lat.with_band(N)
    return SpectralField(new, np.where(lat.mask(N), f.coeffs, 0.0))


def sobolev_norm(f: SpectralField, s: float, p: float = 2) -> np.ndarray:
    """``H^s`` norm (``p=2``, exact) or grid-max ``W^{s,inf}`` norm (``p=inf``).

    The ``p=inf`` value is the maximum over grid points of
    ``|<nabla>^s f|``; it approximates the continuum sup-norm and depends
    on the grid it was evaluated on.  Batch axes are preserved.
    """
    w = BESSEL(f.lattice) ** s
    if p == 2:
        return np.sqrt(np.sum((w * w) * np.abs(f.coeffs) ** 2, axis=(-2, -1)))
    if p == math.inf:
        g = _to_grid(f.coeffs * w, f.lattice.M)
        return np.max(np.abs(g), axis=(-2, -1))
    raise ValueError("only p = 2 and p = inf are supported")


def resample(f: SpectralField, lattice: FrequencyLattice) -> SpectralField:
    """Move coefficients to another grid size (zero-pad or truncate)."""
    src = f.lattice
    out = np.zeros(f.batch_shape + lattice.shape, dtype=np.complex128)
    keep = src.mask(None)
    h = lattice.M // 2
    keep = keep & (np.abs(src.n1) < h) & (np.abs(src.n2) < h)
    si, sj = np.nonzero(keep)
    ti = src.n1[si, sj] % lattice.M
    tj = src.n2[si, sj] % lattice.M
    out[..., ti, tj] = f.coeffs[..., si, sj]
    band = lattice.N
    return SpectralField(lattice, np.where(lattice.mask(band), out, 0.0))
