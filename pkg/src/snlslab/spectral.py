"""Fourier representation of complex fields on the periodic torus [0, 1].

A field u(x) is stored by its coefficients in the complex exponential basis,

    u(x) = sum_{k=-K}^{K} c_k exp(2 pi i k x),

kept in *centered* order (index ``k + K``) so that truncation and zero-padding
between grids of different half-bandwidth are plain slices.  The collocation
grid has ``n = 2K + 1`` points ``x_j = j / n``; with an odd ``n`` there is no
unpaired Nyquist mode and real fields have exactly conjugate-symmetric
coefficients.

Coefficient arrays may carry leading batch axes (an ensemble of Monte Carlo
paths); every function here acts on the last axis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi


def eigenvalue(k) -> float:
    """Eigenvalue of the negative periodic Laplacian for wavenumber ``k``.

    ``k`` may be an integer or a d-tuple of integers; returns 4 pi^2 |k|^2.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return float(4.0 * np.pi**2 * np.sum(k * k))


@dataclass(frozen=True)
class FourierGrid:
    """Odd-sized collocation grid with modes ``-K..K`` per axis."""

    K: int
    d: int = 1

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"half-bandwidth K must be a nonnegative integer, got {self.K!r}")
        if self.d != 1:
            raise NotImplementedError("only d = 1 transforms are implemented")

    @property
    def n(self) -> int:
        return 2 * self.K + 1

    @property
    def N(self) -> int:
        """Dimension of the Galerkin space, (2K+1)^d."""
        return self.n**self.d

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    @property
    def eigenvalues(self) -> np.ndarray:
        k = self.modes.astype(float)
        return 4.0 * np.pi**2 * k * k

    @property
    def norm_weights(self) -> np.ndarray:
        """Weights kappa_k of the fractional norms: lambda_k, and 1 on the zero mode."""
        w = self.eigenvalues.copy()
        w[self.K] = 1.0
        return w

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def index(self, k: int) -> int:
        if abs(k) > self.K:
            raise ValueError(f"mode {k} outside grid with K={self.K}")
        return k + self.K

    def window(self, K_cut: int) -> slice:
        """Slice of the centered coefficient axis holding modes |k| <= K_cut."""
        if K_cut > self.K or K_cut < 0:
            raise ValueError(f"K_cut={K_cut} outside [0, {self.K}]")
        return slice(self.K - K_cut, self.K + K_cut + 1)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a field (or a batch of fields) on ``grid``."""

    grid: FourierGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.ndim == 0 or c.shape[-1] != self.grid.n:
            raise ValueError(
                f"coefficient axis has length {c.shape[-1] if c.ndim else 0}, grid expects {self.grid.n}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("field coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: FourierGrid, batch: tuple[int, ...] = ()) -> "SpectralField":
        return cls(grid, np.zeros(batch + (grid.n,), dtype=np.complex128))

    @classmethod
    def unit_mode(cls, grid: FourierGrid, k: int, amplitude: complex = 1.0) -> "SpectralField":
        c = np.zeros(grid.n, dtype=np.complex128)
        c[grid.index(k)] = amplitude
        return cls(grid, c)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    def with_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def norm(self, mu: float = 0.0):
        return sobolev_norm(self, mu)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_grid(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)

    def __repr__(self) -> str:
        return f"SpectralField(K={self.grid.K}, batch={self.batch_shape})"


def _check_same_grid(a: SpectralField, b: SpectralField) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: K={a.grid.K} vs K={b.grid.K}")


def sobolev_norm(v: SpectralField, mu: float):
    """sqrt(|c_0|^2 + sum_{k != 0} lambda_k^mu |c_k|^2); the L2 norm for mu = 0.

    Returns a float for a single field and an array over the batch axes otherwise.
    """
    if mu < 0:
        raise ValueError(f"Sobolev index must be nonnegative, got {mu}")
    a2 = np.abs(v.coeffs) ** 2
    if mu != 0:
        a2 = a2 * v.grid.norm_weights**mu
    out = np.sqrt(np.sum(a2, axis=-1))
    return float(out) if out.ndim == 0 else out


def project(v: SpectralField, K_cut: int) -> SpectralField:
    """Galerkin projection: zero every coefficient with |k| > K_cut (same grid)."""
    window = v.grid.window(K_cut)
    c = np.zeros_like(v.coeffs)
    c[..., window] = v.coeffs[..., window]
    return v.with_coeffs(c)


def restrict(v: SpectralField, K_cut: int) -> SpectralField:
    """Projection onto |k| <= K_cut, returned on the smaller grid."""
    return SpectralField(FourierGrid(K_cut, v.grid.d), v.coeffs[..., v.grid.window(K_cut)])


def embed(v: SpectralField, grid: FourierGrid) -> SpectralField:
    """Zero-pad ``v`` onto a grid of larger (or equal) bandwidth."""
    if grid.K < v.grid.K:
        raise ValueError(f"cannot embed K={v.grid.K} into smaller grid K={grid.K}")
    c = np.zeros(v.batch_shape + (grid.n,), dtype=np.complex128)
    c[..., grid.window(v.grid.K)] = v.coeffs
    return SpectralField(grid, c)


def coeffs_to_values(coeffs: np.ndarray) -> np.ndarray:
    """Centered coefficients -> values on the collocation grid (last axis)."""
    return np.fft.ifft(np.fft.ifftshift(coeffs, axes=-1), axis=-1, norm="forward")


def values_to_coeffs(values: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft(values, axis=-1, norm="forward"), axes=-1)


def to_grid(v: SpectralField) -> np.ndarray:
    """Point values u(x_j), x_j = j/n."""
    return coeffs_to_values(v.coeffs)


def from_grid(values, grid: FourierGrid) -> SpectralField:
    values = np.asarray(values)
    if values.ndim == 0 or values.shape[-1] != grid.n:
        raise ValueError(f"expected {grid.n} grid values on the last axis, got shape {values.shape}")
    return SpectralField(grid, values_to_coeffs(values.astype(np.complex128)))


def random_field(rng: np.random.Generator, r: float, grid: FourierGrid,
                 batch: tuple[int, ...] = ()) -> SpectralField:
    """Gaussian test field with coefficients (1 + lambda_k)^(-r) * z_k, z_k standard complex normal.

    ``r = inf`` gives a field supported on the zero mode only.  In d = 1 the
    field has finite mu-norm in the continuum limit when r > 1/2 + mu.
    """
    shape = batch + (grid.n,)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    with np.errstate(over="ignore"):
        amp = (1.0 + grid.eigenvalues) ** (-float(r))
    return SpectralField(grid, amp * z)


def write_field_csv(v: SpectralField, path) -> None:
    """Write ``mode,re,im`` rows; float repr round-trips exactly."""
    if v.batch_shape:
        raise ValueError("only single fields can be written")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "re", "im"])
        for k, c in zip(v.grid.modes, v.coeffs):
            w.writerow([int(k), repr(float(c.real)), repr(float(c.imag))])


def read_field_csv(path) -> SpectralField:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    modes = np.array([int(r["mode"]) for r in rows])
    K = int(np.max(np.abs(modes)))
    grid = FourierGrid(K)
    if not np.array_equal(np.sort(modes), grid.modes):
        raise ValueError(f"{path}: mode column is not a full -K..K range")
    c = np.zeros(grid.n, dtype=np.complex128)
    for k, r in zip(modes, rows):
        c[k + K] = complex(float(r["re"]), float(r["im"]))
    return SpectralField(grid, c)


def save_field(v: SpectralField, path) -> None:
    """Binary companion of the CSV format: an ``.npy`` array of (mode, re, im) rows."""
    if v.batch_shape:
        raise ValueError("only single fields can be written")
    table = np.column_stack([v.grid.modes.astype(float), v.coeffs.real, v.coeffs.imag])
    np.save(Path(path), table)


def load_field(path) -> SpectralField:
    table = np.load(Path(path))
    modes = table[:, 0].astype(int)
    grid = FourierGrid(int(np.max(np.abs(modes))))
    c = np.zeros(grid.n, dtype=np.complex128)
    c[modes + grid.K] = table[:, 1] + 1j * table[:, 2]
    return SpectralField(grid, c)
