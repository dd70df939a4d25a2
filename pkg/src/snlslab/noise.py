"""Q-Wiener noise on the torus: covariance spec, path sampling, coarse coupling.

The real orthonormal basis {1, sqrt2 cos(2 pi k x), sqrt2 sin(2 pi k x)} is
stored on the centered index axis of a :class:`~snlslab.spectral.FourierGrid`:
index ``K`` holds the constant, ``K + k`` the cosine and ``K - k`` the sine of
wavenumber k >= 1.  ``q`` and the real Brownian draws use that layout, and
:meth:`NoiseSpec.assemble` maps them to conjugate-symmetric complex
coefficients.

Brownian increments are drawn as standard normals rounded to the lattice
``2**-32 Z`` and kept as int64.  Sums over blocks of fine steps are then exact,
so a coarse increment is bitwise the sum of its fine increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import FourierGrid, SpectralField

LATTICE_BITS = 32
LATTICE_UNIT = 2.0**-LATTICE_BITS


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Eigenvalues ``q`` of Q on the real basis, in the centered dof layout."""

    grid: FourierGrid
    q: np.ndarray
    r: float | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (self.grid.n,):
            raise ValueError(f"q must have shape ({self.grid.n},), got {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("Q eigenvalues must be finite and nonnegative")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def power(cls, grid: FourierGrid, r: float, scale: float = 1.0) -> "NoiseSpec":
        """q_k = scale * (1 + lambda_k)^(-r), shared by the cosine and sine of k."""
        return cls(grid, scale * (1.0 + grid.eigenvalues) ** (-float(r)), r=float(r))

    @classmethod
    def from_table(cls, grid: FourierGrid, table) -> "NoiseSpec":
        """Build from ``{k: q_k}`` (one value per wavenumber) or a full layout array."""
        if isinstance(table, dict):
            q = np.zeros(grid.n)
            for k, val in table.items():
                k = abs(int(k))
                if k > grid.K:
                    raise ValueError(f"table mode {k} outside grid K={grid.K}")
                q[grid.K + k] = q[grid.K - k] = float(val)
            return cls(grid, q)
        return cls(grid, np.asarray(table, dtype=float))

    @property
    def trace(self) -> float:
        return math.fsum(self.q)

    def restrict(self, K_cut: int) -> "NoiseSpec":
        return NoiseSpec(FourierGrid(K_cut, self.grid.d), self.q[self.grid.window(K_cut)], self.r)

    def assemble(self, xi) -> np.ndarray:
        """Real-basis amplitudes ``xi`` (..., n) -> complex coefficients of sum_j sqrt(q_j) xi_j g_j."""
        xi = np.asarray(xi, dtype=float)
        K = self.grid.K
        s = np.sqrt(self.q)
        w = np.empty(xi.shape, dtype=np.complex128)
        w[..., K] = s[K] * xi[..., K]
        if K:
            cos = s[K + 1:] * xi[..., K + 1:] / math.sqrt(2.0)
            sin = s[K - 1::-1] * xi[..., K - 1::-1] / math.sqrt(2.0)
            w[..., K + 1:] = cos - 1j * sin
            w[..., K - 1::-1] = cos + 1j * sin
        return w


@dataclass(frozen=True)
class HSNorm:
    """Result of :func:`weighted_hs_norm`."""

    value: float
    converges: bool
    terms: np.ndarray = field(repr=False)
    diagnostic: str = ""


def weighted_hs_norm(spec: NoiseSpec, mu: float) -> HSNorm:
    """||(-Delta)^{mu/2} Q^{1/2}||_HS over the represented modes.

    For the power family the infinite tail sum_k lambda_k^mu q_k converges iff
    2 (r - mu) > 1; a divergent tail is reported as ``value = inf`` with a
    diagnostic rather than raised.  Tables without a decay law are judged on
    the truncation alone.
    """
    terms = spec.grid.norm_weights**mu * spec.q
    value = math.sqrt(math.fsum(terms))
    if spec.r is not None and not 2.0 * (spec.r - mu) > 1.0:
        return HSNorm(math.inf, False, terms,
                      f"tail diverges: 2(r - mu) = {2.0 * (spec.r - mu):g} <= 1 "
                      f"(truncated sum {value:.6g})")
    return HSNorm(value, True, terms)


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo path, keyed by (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))))


def draw_lattice(rng: np.random.Generator, steps: int, n: int) -> np.ndarray:
    """``steps x n`` standard normals rounded onto the 2**-32 lattice (int64 units)."""
    return np.rint(rng.standard_normal((steps, n)) * 2.0**LATTICE_BITS).astype(np.int64)


def lattice_to_increments(spec: NoiseSpec, lattice: np.ndarray, tau_fine: float) -> np.ndarray:
    """Lattice sums (..., n) -> complex increment coefficients on ``spec.grid``."""
    xi = lattice.astype(float) * (LATTICE_UNIT * math.sqrt(tau_fine))
    return spec.assemble(xi)


def block_sums(lattice: np.ndarray, R: int) -> np.ndarray:
    """Exact sums over consecutive blocks of ``R`` fine steps along axis -2."""
    steps, n = lattice.shape[-2:]
    if steps % R:
        raise ValueError(f"{steps} fine steps are not a multiple of R={R}")
    return lattice.reshape(lattice.shape[:-2] + (steps // R, R, n)).sum(axis=-2)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """One sampled Q-Wiener path on the fine time grid."""

    spec: NoiseSpec
    seed: int
    path_index: int
    M_fine: int
    T: float
    lattice: np.ndarray = field(repr=False)

    @property
    def tau_fine(self) -> float:
        return self.T / self.M_fine

    def brownian_increments(self) -> np.ndarray:
        """Real increments delta beta_j, shape (M_fine, n), each N(0, tau_fine)."""
        return self.lattice.astype(float) * (LATTICE_UNIT * math.sqrt(self.tau_fine))

    def fine_increment(self, j: int) -> SpectralField:
        return self.coarse_increment(j, 1)

    def coarse_lattice(self, R: int) -> np.ndarray:
        if R < 1 or self.M_fine % R:
            raise ValueError(f"refinement factor R={R} must divide M_fine={self.M_fine}")
        return block_sums(self.lattice, R)

    def coarse_increment(self, m: int, R: int) -> SpectralField:
        """W(t_{m+1}) - W(t_m) on the coarse grid tau = R tau_fine."""
        if R < 1 or self.M_fine % R:
            raise ValueError(f"refinement factor R={R} must divide M_fine={self.M_fine}")
        if not 0 <= m < self.M_fine // R:
            raise ValueError(f"coarse index {m} outside [0, {self.M_fine // R})")
        s = self.lattice[m * R:(m + 1) * R].sum(axis=0)
        return SpectralField(self.spec.grid, lattice_to_increments(self.spec, s, self.tau_fine))

    def coarse_increments(self, R: int) -> np.ndarray:
        """All coarse increments as a complex array (M_fine // R, n)."""
        return lattice_to_increments(self.spec, self.coarse_lattice(R), self.tau_fine)


def sample_path(spec: NoiseSpec, seed: int, M_fine: int, T: float, path_index: int = 0) -> NoisePath:
    if M_fine < 1:
        raise ValueError(f"M_fine must be >= 1, got {M_fine}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    lattice = draw_lattice(path_rng(seed, path_index), M_fine, spec.grid.n)
    lattice.setflags(write=False)
    return NoisePath(spec, int(seed), int(path_index), int(M_fine), float(T), lattice)
