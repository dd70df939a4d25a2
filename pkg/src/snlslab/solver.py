"""Implicit midpoint / spectral Galerkin time stepping.

One step on the Galerkin space V_N (modes |k| <= K_cut) reads

    u_{m+1} = S_tau u_m + (i tau / eps) T_tau F(u_{m+1/2}) - (i / eps) T_tau G(u_m) dW_m,

with u_{m+1/2} = (u_m + u_{m+1}) / 2, the Cayley factor S_tau and the
resolvent T_tau from :mod:`snlslab.semigroup`.  The drift is resolved by
Picard iteration started at u_m.  For F(u) = i alpha u the relation is solved
per mode in closed form and no iteration takes place.

All arrays carry the coefficient axis last; leading axes are independent
paths and are advanced together.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, drift_coeffs
from .noise import NoisePath
from .semigroup import cayley_factor, resolvent_factor
from .spectral import FourierGrid, SpectralField, coeffs_to_values, embed, restrict, values_to_coeffs


class ConfigError(ValueError):
    """A solver configuration violates a precondition."""


class FixedPointError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


class IntegrationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class SolverConfig:
    eps: float
    T: float
    M: int
    K_cut: int
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    seed: int = 0
    p_moment: float = 2.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError(f"M must be a positive integer, got {self.M}")
        if int(self.K_cut) != self.K_cut or self.K_cut < 0:
            raise ConfigError(f"K_cut must be a nonnegative integer, got {self.K_cut}")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau = T/M = {self.tau:g} must lie in (0, 1)")
        if not self.fp_tol > 0 or self.fp_max_iter < 1:
            raise ConfigError("fp_tol must be positive and fp_max_iter >= 1")
        if self.p_moment < 2:
            raise ConfigError(f"moment order p must be >= 2, got {self.p_moment}")

    @property
    def tau(self) -> float:
        return self.T / self.M

    @property
    def grid(self) -> FourierGrid:
        return FourierGrid(self.K_cut)

    def contraction_factor(self, cs: CoefficientSet) -> float:
        """Lipschitz constant tau L1 / (2 eps) of the midpoint map."""
        return self.tau * cs.L1 / (2.0 * self.eps)

    def check(self, cs: CoefficientSet) -> None:
        """Reject configurations where Picard iteration is not a certified contraction."""
        if cs.is_linear_drift:
            return
        q = self.contraction_factor(cs)
        if not q < 0.5:
            raise ConfigError(
                f"contraction gate failed: tau L1 / (2 eps) = {q:.4g} >= 1/2 "
                f"(tau={self.tau:g}, L1={cs.L1:g}, eps={self.eps:g}); increase M"
            )


@dataclass
class FixedPointResult:
    value: np.ndarray | SpectralField
    iterations: np.ndarray | int
    history: list[float]


def fixed_point_solve(fmap: Callable, x0, fp_tol: float, fp_max_iter: int) -> FixedPointResult:
    """Picard iteration x <- fmap(x) until ||x - fmap(x)|| <= fp_tol (1 + ||x||).

    Works on a SpectralField or a coefficient array whose leading axes are
    independent problems; each row stops as soon as it meets the tolerance.
    ``history`` holds the largest residual per iteration.
    """
    wrap = isinstance(x0, SpectralField)
    if wrap:
        grid = x0.grid
        amap = lambda c: fmap(SpectralField(grid, c)).coeffs  # noqa: E731
        x = np.array(x0.coeffs)
    else:
        amap = fmap
        x = np.array(x0, dtype=np.complex128)

    x = amap(x)
    iters = np.ones(x.shape[:-1], dtype=np.int64)
    active = np.ones(x.shape[:-1], dtype=bool)
    history: list[float] = []
    for it in range(1, fp_max_iter + 1):
        y = amap(x)
        res = np.sqrt(np.sum(np.abs(y - x) ** 2, axis=-1))
        tol = fp_tol * (1.0 + np.sqrt(np.sum(np.abs(x) ** 2, axis=-1)))
        history.append(float(np.max(np.where(active, res, 0.0))))
        done = res <= tol
        iters = np.where(active, it, iters)
        active &= ~done
        if not np.any(active):
            break
        x = np.where(active[..., None], y, x)
    else:
        raise FixedPointError(
            f"no convergence in {fp_max_iter} iterations (last residual {history[-1]:.3e})", history
        )
    if wrap:
        return FixedPointResult(SpectralField(grid, x), int(np.max(iters)), history)
    return FixedPointResult(x, iters if iters.ndim else int(iters), history)


class MidpointStepper:
    """Precomputed per-mode factors for repeated midpoint steps at fixed (eps, tau, K_cut).

    ``noise_grid`` is the grid on which increments are supplied; it must
    contain the Galerkin grid.  Multiplicative noise is formed on that grid
    and then projected, i.e. the step uses P_N (g(u_m) dW).
    """

    def __init__(self, cfg: SolverConfig, cs: CoefficientSet, noise_grid: FourierGrid | None = None,
                 generic: bool = False):
        cfg.check(cs)
        self.cfg, self.cs = cfg, cs
        self.grid = cfg.grid
        self.noise_grid = noise_grid or self.grid
        if self.noise_grid.K < self.grid.K:
            raise ValueError(f"noise grid K={self.noise_grid.K} smaller than K_cut={self.grid.K}")
        self.window = self.noise_grid.window(self.grid.K)
        lam = self.grid.eigenvalues
        eps, tau = cfg.eps, cfg.tau
        self.S = cayley_factor(lam, eps, tau)
        self.T = resolvent_factor(lam, eps, tau)
        self.fast = cs.is_linear_drift and not generic
        if self.fast:
            z = tau * (-0.5j * eps * lam - cs.alpha / eps)
            self.R = (1.0 + z / 2.0) / (1.0 - z / 2.0)
            self.D = (-1j / eps) / (1.0 - z / 2.0)
        else:
            self.D = (-1j / eps) * self.T

    def noise_term(self, u: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """P_N G(u) dW as coefficients on the Galerkin grid (before the resolvent)."""
        cs = self.cs
        if cs.is_additive:
            if cs.noise_scale == 0.0:
                return np.zeros(u.shape, dtype=np.complex128)
            w = dW[..., self.window]
            return w if cs.noise_scale == 1.0 else cs.noise_scale * w
        if cs.diffusion is None:
            return np.zeros(u.shape, dtype=np.complex128)
        ub = np.zeros(u.shape[:-1] + (self.noise_grid.n,), dtype=np.complex128)
        ub[..., self.window] = u
        prod = cs.diffusion(coeffs_to_values(ub)) * coeffs_to_values(dW)
        return values_to_coeffs(prod)[..., self.window]

    def step(self, u: np.ndarray, dW: np.ndarray | None) -> tuple[np.ndarray, int]:
        """Advance coefficient array ``u`` by one step; returns (u_next, max Picard iterations)."""
        g = None if dW is None else self.noise_term(u, dW)
        if self.fast:
            out = self.R * u
            if g is not None:
                out = out + self.D * g
            return out, 0
        cfg, grid = self.cfg, self.grid
        base = self.S * u
        if g is not None:
            base = base + self.D * g
        drift_factor = (1j * cfg.tau / cfg.eps) * self.T

        def fmap(x):
            return base + drift_factor * drift_coeffs(self.cs, grid, 0.5 * (u + x))

        res = fixed_point_solve(fmap, u, cfg.fp_tol, cfg.fp_max_iter)
        return res.value, int(np.max(res.iterations))


def midpoint_step(u_m: SpectralField, dW: SpectralField, cfg: SolverConfig, cs: CoefficientSet) -> SpectralField:
    """One midpoint step on the grid of ``u_m`` (which must have K = cfg.K_cut)."""
    if u_m.grid != cfg.grid:
        raise ValueError(f"u_m lives on K={u_m.grid.K}, config expects K_cut={cfg.K_cut}")
    if dW.grid.K < cfg.K_cut:
        raise ValueError(f"increment grid K={dW.grid.K} is coarser than K_cut={cfg.K_cut}")
    stepper = MidpointStepper(cfg, cs, dW.grid)
    out, _ = stepper.step(u_m.coeffs, dW.coeffs)
    return SpectralField(cfg.grid, out)


def to_galerkin(u0: SpectralField, K_cut: int) -> SpectralField:
    """P_N u0 on the grid with half-bandwidth K_cut (zero-padded when u0 is coarser)."""
    if u0.grid.K >= K_cut:
        return restrict(u0, K_cut)
    return embed(u0, FourierGrid(K_cut))


@dataclass
class Trajectory:
    """Snapshots of u_m at selected grid times t_m = m tau."""

    grid: FourierGrid
    steps: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray = field(repr=False)
    fp_iterations: np.ndarray = field(repr=False)

    @property
    def final(self) -> SpectralField:
        return SpectralField(self.grid, self.snapshots[-1])

    def at(self, m: int) -> SpectralField:
        idx = np.flatnonzero(self.steps == m)
        if not idx.size:
            raise KeyError(f"no snapshot at step {m}")
        return SpectralField(self.grid, self.snapshots[idx[0]])

    def write_csv(self, path) -> None:
        """Rows ``t,mode,re,im`` for every snapshot."""
        if self.snapshots.ndim != 2:
            raise ValueError("CSV export needs a single-path trajectory")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mode", "re", "im"])
            for t, c in zip(self.times, self.snapshots):
                for k, ck in zip(self.grid.modes, c):
                    w.writerow([repr(float(t)), int(k), repr(float(ck.real)), repr(float(ck.imag))])

    def write_grid_csv(self, path) -> None:
        """Rows ``t,x,density`` with density |u(x)|^2 on the collocation grid."""
        if self.snapshots.ndim != 2:
            raise ValueError("CSV export needs a single-path trajectory")
        x = self.grid.points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "density"])
            for t, c in zip(self.times, self.snapshots):
                for xj, nj in zip(x, np.abs(coeffs_to_values(c)) ** 2):
                    w.writerow([repr(float(t)), repr(float(xj)), repr(float(nj))])


def integrate_increments(u0: np.ndarray, increments: np.ndarray | None, cfg: SolverConfig,
                         cs: CoefficientSet, noise_grid: FourierGrid | None = None,
                         snapshot_every: int | None = None) -> Trajectory:
    """Run ``cfg.M`` steps from coefficients ``u0`` consuming ``increments[m]`` at step m."""
    stepper = MidpointStepper(cfg, cs, noise_grid)
    if increments is not None and len(increments) != cfg.M:
        raise ValueError(f"{len(increments)} increments supplied for M={cfg.M} steps")
    keep = {0, cfg.M}
    if snapshot_every:
        keep.update(range(0, cfg.M + 1, snapshot_every))
    steps = np.array(sorted(keep))
    snaps = [np.array(u0, dtype=np.complex128)]
    iters = np.zeros(cfg.M, dtype=np.int64)
    u = snaps[0]
    for m in range(cfg.M):
        try:
            u, iters[m] = stepper.step(u, None if increments is None else increments[m])
        except FixedPointError as exc:
            raise IntegrationError(m, exc) from exc
        if not np.all(np.isfinite(u)):
            raise IntegrationError(m, FloatingPointError("non-finite state"))
        if m + 1 in keep:
            snaps.append(u)
    return Trajectory(cfg.grid, steps, steps * cfg.tau, np.stack(snaps), iters)


def integrate(u0: SpectralField, path: NoisePath | None, R: int, cfg: SolverConfig, cs: CoefficientSet,
              snapshot_every: int | None = None) -> Trajectory:
    """Integrate P_N u0 over [0, T] on ``path`` coarsened by ``R`` fine steps per step.

    ``path=None`` runs the deterministic equation.
    """
    u = to_galerkin(u0, cfg.K_cut)
    if path is None:
        return integrate_increments(u.coeffs, None, cfg, cs, snapshot_every=snapshot_every)
    if cfg.M * R != path.M_fine:
        raise ValueError(f"M * R = {cfg.M * R} does not match the path's {path.M_fine} fine steps")
    if not math.isclose(cfg.T, path.T, rel_tol=1e-14):
        raise ValueError(f"horizon T={cfg.T} differs from the path's T={path.T}")
    incs = path.coarse_increments(R)
    return integrate_increments(u.coeffs, incs, cfg, cs, path.spec.grid, snapshot_every)


def reference_solve(u0: SpectralField, path: NoisePath, cfg_ref: SolverConfig, cs: CoefficientSet) -> SpectralField:
    """Terminal state on the reference grid; coarse solutions are compared after zero-padding."""
    if path.M_fine % cfg_ref.M:
        raise ValueError(f"reference M={cfg_ref.M} does not divide the path's {path.M_fine} steps")
    return integrate(u0, path, path.M_fine // cfg_ref.M, cfg_ref, cs).final
