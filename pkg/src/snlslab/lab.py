"""Monte Carlo strong-error estimation, rate fitting and diagnostics.

Every path is one independent stream (:func:`snlslab.noise.path_rng`).  The
reference and all coarse solves of a path consume the same lattice draws, so
their increments telescope exactly.  Paths are processed in batches of fixed
size; the batch layout does not depend on the thread count, and reductions
over paths use ``math.fsum`` in path order, so results are bitwise
reproducible under any degree of parallelism.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .coefficients import CoefficientSet
from .noise import NoiseSpec, block_sums, draw_lattice, lattice_to_increments, path_rng
from .semigroup import LemmaRow
from .solver import MidpointStepper, SolverConfig, to_galerkin
from .spectral import FourierGrid, SpectralField, coeffs_to_values

CHUNK_TARGET = 256


@dataclass
class ExperimentPlan:
    """One Monte Carlo experiment: a ladder of (K_cut, M) points against one reference."""

    name: str
    cs: CoefficientSet
    r: float
    eps: list[float]
    ladder: list[tuple[int, int]]
    K_ref: int
    M_ref: int
    paths: int
    seed: int
    T: float = 1.0
    noise_scale: float = 1.0
    p: float = 2.0
    mu: float = 0.0
    u0: SpectralField | None = None
    fp_tol: float = 1e-12
    fp_max_iter: int = 100
    batch_size: int = 25
    sup_over_grid: bool = False

    def __post_init__(self):
        self.ladder = [(int(K), int(M)) for K, M in self.ladder]
        self.eps = [float(e) for e in self.eps]
        self.validate()

    def validate(self) -> None:
        if self.paths < 2:
            raise ValueError(f"{self.name}: at least 2 paths are needed, got {self.paths}")
        if not self.eps or not self.ladder:
            raise ValueError(f"{self.name}: eps list and ladder must be nonempty")
        if self.p < 2:
            raise ValueError(f"{self.name}: moment order p must be >= 2")
        for K, M in self.ladder:
            # reference must be at least as fine on both axes (ladders may share one axis with it)
            if K > self.K_ref or M > self.M_ref:
                raise ValueError(f"{self.name}: ladder point (K={K}, M={M}) is finer than the "
                                 f"reference (K={self.K_ref}, M={self.M_ref})")
            if self.M_ref % M:
                raise ValueError(f"{self.name}: M={M} does not divide M_ref={self.M_ref}")
        for e in self.eps:
            for K, M in self.ladder + [(self.K_ref, self.M_ref)]:
                SolverConfig(e, self.T, M, K, self.fp_tol, self.fp_max_iter, self.seed, self.p).check(self.cs)

    @property
    def ref_grid(self) -> FourierGrid:
        return FourierGrid(self.K_ref)

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec.power(self.ref_grid, self.r, self.noise_scale)

    def initial(self) -> np.ndarray:
        if self.u0 is None:
            return np.zeros(self.ref_grid.n, dtype=np.complex128)
        return to_galerkin(self.u0, self.K_ref).coeffs

    def config(self, eps: float, K: int, M: int) -> SolverConfig:
        return SolverConfig(eps, self.T, M, K, self.fp_tol, self.fp_max_iter, self.seed, self.p)

    def batches(self) -> list[range]:
        b = self.batch_size
        return [range(s, min(s + b, self.paths)) for s in range(0, self.paths, b)]


@dataclass(frozen=True)
class ErrorRow:
    eps: float
    K_cut: int
    M: int
    error: float
    stderr: float
    paths: int


@dataclass
class ErrorTable:
    T: float
    rows: list[ErrorRow] = field(default_factory=list)
    experiment: str = ""

    def select(self, **kw) -> "ErrorTable":
        rows = [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]
        return ErrorTable(self.T, rows, self.experiment)

    def write_csv(self, path, append: bool = False) -> None:
        write_errors_csv([self], path, append)


ERROR_FIELDS = ["experiment", "eps", "K_cut", "N", "M", "tau", "error", "stderr", "paths"]


def write_errors_csv(tables: Sequence[ErrorTable], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(ERROR_FIELDS)
        for t in tables:
            for r in t.rows:
                w.writerow([t.experiment, repr(r.eps), r.K_cut, 2 * r.K_cut + 1, r.M, repr(t.T / r.M),
                            repr(r.error), repr(r.stderr), r.paths])


def lp_estimate(norms: np.ndarray, p: float) -> tuple[float, float]:
    """(mean ||e||^p)^(1/p) with a delta-method standard error."""
    y = np.asarray(norms, dtype=float) ** p
    P = y.size
    m = math.fsum(y) / P
    if m == 0.0:
        return 0.0, 0.0
    var = math.fsum((y - m) ** 2) / (P - 1) if P > 1 else math.inf
    se_m = math.sqrt(var / P)
    return m ** (1.0 / p), se_m * m ** (1.0 / p - 1.0) / p


def _chunk_length(Rs: Sequence[int], M_ref: int) -> int:
    lcm = math.lcm(*Rs) if Rs else 1
    return min(M_ref, lcm * max(1, CHUNK_TARGET // lcm))


def _draw_chunk(rngs, steps: int, n: int) -> np.ndarray:
    return np.stack([draw_lattice(rng, steps, n) for rng in rngs])


def _strong_batch(plan: ExperimentPlan, eps: float, ids: range) -> np.ndarray:
    """Terminal (or sup-over-grid) L2 errors, shape (len(ladder), len(ids))."""
    spec = plan.noise_spec()
    grid = spec.grid
    tau_f = plan.T / plan.M_ref
    ref = MidpointStepper(plan.config(eps, plan.K_ref, plan.M_ref), plan.cs, grid)
    coarse = [MidpointStepper(plan.config(eps, K, M), plan.cs, grid) for K, M in plan.ladder]
    Rs = [plan.M_ref // M for _, M in plan.ladder]
    windows = [grid.window(K) for K, _ in plan.ladder]
    L = _chunk_length(Rs, plan.M_ref)
    rngs = [path_rng(plan.seed, i) for i in ids]

    u0 = plan.initial()
    u_ref = np.broadcast_to(u0, (len(ids), grid.n)).copy()
    u_c = [u_ref[:, w].copy() for w in windows]
    worst = np.zeros((len(plan.ladder), len(ids)))

    for start in range(0, plan.M_ref, L):
        steps = min(L, plan.M_ref - start)
        lat = _draw_chunk(rngs, steps, grid.n)
        inc = lattice_to_increments(spec, lat, tau_f)
        hist = np.empty((len(ids), steps, grid.n), dtype=np.complex128) if plan.sup_over_grid else None
        for j in range(steps):
            u_ref, _ = ref.step(u_ref, inc[:, j])
            if hist is not None:
                hist[:, j] = u_ref
        total = lat.sum(axis=1)
        for i, (st, R, w) in enumerate(zip(coarse, Rs, windows)):
            blocks = block_sums(lat, R)
            if not np.array_equal(blocks.sum(axis=1), total):
                raise AssertionError("coarse increments do not telescope to the fine ones")
            cinc = lattice_to_increments(spec, blocks, tau_f)
            u = u_c[i]
            for m in range(blocks.shape[1]):
                u, _ = st.step(u, cinc[:, m])
                if hist is not None:
                    worst[i] = np.maximum(worst[i], _embed_dist(hist[:, (m + 1) * R - 1], u, w))
            u_c[i] = u
    if plan.sup_over_grid:
        return worst
    return np.stack([_embed_dist(u_ref, u, w) for u, w in zip(u_c, windows)])


def _embed_dist(u_ref: np.ndarray, u: np.ndarray, window: slice) -> np.ndarray:
    d = u_ref.copy()
    d[..., window] -= u
    return np.sqrt(np.sum(np.abs(d) ** 2, axis=-1))


def _run_batches(fn, plan: ExperimentPlan, eps: float, threads: int) -> np.ndarray:
    batches = plan.batches()
    if threads <= 1:
        parts = [fn(plan, eps, ids) for ids in batches]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ids: fn(plan, eps, ids), batches))
    return np.concatenate(parts, axis=-1)


def strong_error(plan: ExperimentPlan, threads: int = 1) -> ErrorTable:
    """ErrorTable with one row per (eps, ladder point), errors in L^p(Omega; L2) at time T."""
    table = ErrorTable(plan.T, experiment=plan.name)
    for eps in plan.eps:
        errs = _run_batches(_strong_batch, plan, eps, threads)
        for (K, M), e in zip(plan.ladder, errs):
            est, se = lp_estimate(e, plan.p)
            table.rows.append(ErrorRow(eps, K, M, est, se, plan.paths))
    return table


# --- rate fitting ---------------------------------------------------------------

AXES = ("N", "tau", "eps")


@dataclass
class ConvergenceReport:
    axis: str
    slope: float
    intercept: float
    slope_stderr: float
    ci: float
    x: np.ndarray
    y: np.ndarray
    residuals: np.ndarray
    excluded: int = 0
    expected: float | None = None
    tolerance: float | None = None
    experiment: str = ""

    @property
    def passed(self) -> bool | None:
        if self.expected is None or self.tolerance is None:
            return None
        return bool(abs(self.slope - self.expected) <= self.tolerance)

    def summary(self) -> str:
        band = "" if self.expected is None else f" (expected {self.expected:+.3f} +- {self.tolerance:g})"
        return f"{self.experiment or 'fit'}: slope vs {self.axis} = {self.slope:+.4f} +- {self.ci:.3f}{band}"


def axis_values(table: ErrorTable, axis: str) -> np.ndarray:
    if axis == "N":
        return np.array([2 * r.K_cut + 1 for r in table.rows], dtype=float)
    if axis == "tau":
        return np.array([table.T / r.M for r in table.rows])
    if axis == "eps":
        return np.array([r.eps for r in table.rows])
    raise ValueError(f"unknown axis {axis!r}; choose from {AXES}")


def fit_rate(table: ErrorTable, axis: str, expected: float | None = None,
             tolerance: float | None = None) -> ConvergenceReport:
    """Least-squares slope of log(error) against log(axis)."""
    x = axis_values(table, axis)
    y = np.array([r.error for r in table.rows])
    keep = y > 0
    excluded = int(np.count_nonzero(~keep))
    if excluded:
        warnings.warn(f"fit_rate: {excluded} row(s) with zero error excluded", stacklevel=2)
    x, y = x[keep], y[keep]
    if np.unique(x).size < 3:
        raise ValueError(f"fit_rate needs at least 3 distinct {axis} values, got {np.unique(x).size}")
    rep = _loglog_fit(x, y, axis, table.experiment)
    rep.excluded, rep.expected, rep.tolerance = excluded, expected, tolerance
    return rep


def write_rates_csv(reports: Sequence[ConvergenceReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "axis", "slope", "ci", "intercept", "points", "expected", "tolerance", "passed"])
        for r in reports:
            w.writerow([r.experiment, r.axis, repr(r.slope), repr(r.ci), repr(r.intercept), r.x.size,
                        "" if r.expected is None else repr(r.expected),
                        "" if r.tolerance is None else repr(r.tolerance),
                        "" if r.passed is None else r.passed])


# --- meshing strategy -------------------------------------------------------------

def pairing_exponent(mu: float, d: int = 1) -> float:
    """Exponent e of the pairing tau = N^(-e) that balances the temporal and spatial rates.

    mu >= 3: 2 mu / d.  2 <= mu < 3: the temporal rate is mu/3 - 1/2, giving
    6 mu / (d (2 mu - 3)).  Below 2 the mu >= 3 rule is reused.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if 2.0 <= mu < 3.0:
        return 6.0 * mu / (d * (2.0 * mu - 3.0))
    return 2.0 * mu / d


def admissible(N: int, mu: float, d: int, eps: float, C: float, delta: float) -> bool:
    """N^(-2 mu / d) / eps <= C delta^2."""
    if math.isinf(delta):
        return True
    return N ** (-2.0 * mu / d) / eps <= C * delta * delta


def calibrate_meshing_constant(table: ErrorTable, mu: float, d: int = 1) -> float:
    """Largest C with N^(-2 mu/d) / eps <= C e^2 violated at no calibration row: min over rows."""
    vals = [(2 * r.K_cut + 1) ** (-2.0 * mu / d) / (r.eps * r.error**2) for r in table.rows if r.error > 0]
    if not vals:
        raise ValueError("calibration table has no nonzero errors")
    return min(vals)


def delta_for_target(K_target: int, mu: float, d: int, eps: float, C: float, margin: float = 1.05) -> float:
    """A target error whose smallest admissible N is 2 K_target + 1 (for margin in [1, N/N_prev))."""
    N = 2 * K_target + 1
    return margin * math.sqrt(N ** (-2.0 * mu / d) / (eps * C))


@dataclass
class MeshingReport:
    delta: float
    mu: float
    d: int
    eps: float
    C: float
    exponent: float
    feasible: bool
    K_cut: int | None = None
    N: int | None = None
    M: int | None = None
    tau: float | None = None
    error: float | None = None
    stderr: float | None = None
    required_N: int | None = None
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.feasible and self.error is not None and self.error <= 2.0 * self.delta


def meshing_check(delta: float, mu: float, d: int, eps: float, C: float, base: ExperimentPlan,
                  ladder_K: Sequence[int], max_steps: int = 10**6, run: bool = True,
                  threads: int = 1) -> MeshingReport:
    """Pick the smallest admissible ladder N, pair tau with it and measure the error there.

    ``base`` supplies model, noise, horizon, paths and seed; the reference is
    (4 K, 8 M).
    """
    e = pairing_exponent(mu, d)
    rep = MeshingReport(delta, mu, d, eps, C, e, False)
    if d != 1:
        raise NotImplementedError("only d = 1 is implemented")
    for K in sorted(ladder_K):
        N = 2 * K + 1
        if admissible(N, mu, d, eps, C, delta):
            break
    else:
        req = math.ceil((eps * C * delta * delta) ** (-d / (2.0 * mu)))
        rep.required_N = req
        rep.message = f"infeasible at desk scale: admissibility needs N >= {req}"
        return rep
    M = max(1, math.ceil(base.T * N**e - 1e-9))
    if M > max_steps:
        rep.required_N = N
        rep.message = f"infeasible at desk scale: pairing needs M = {M} > {max_steps} steps"
        return rep
    rep.feasible = True
    rep.K_cut, rep.N, rep.M, rep.tau = K, N, M, base.T / M
    if run:
        plan = ExperimentPlan(f"{base.name}_meshing", base.cs, base.r, [eps], [(K, M)], 4 * K, 8 * M,
                              base.paths, base.seed, base.T, base.noise_scale, base.p, mu, base.u0,
                              base.fp_tol, base.fp_max_iter, base.batch_size)
        row = strong_error(plan, threads).rows[0]
        rep.error, rep.stderr = row.error, row.stderr
        rep.message = f"e = {row.error:.4g} vs 2 delta = {2 * delta:.4g}"
    return rep


# --- moments and Hoelder regularity ----------------------------------------------

@dataclass
class MomentReport:
    mu: float
    p: float
    eps: list[float]
    times: np.ndarray
    levels: np.ndarray
    sup_levels: np.ndarray
    holder_offsets: np.ndarray
    holder: np.ndarray
    C_min: float | None
    level_fit: ConvergenceReport | None = None
    holder_fits: list[ConvergenceReport] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "eps", "t", "lag", "value"])
            for i, e in enumerate(self.eps):
                for t, v in zip(self.times, self.levels[i]):
                    w.writerow(["moment", repr(e), repr(float(t)), "", repr(float(v))])
                for h, v in zip(self.holder_offsets, self.holder[i]):
                    w.writerow(["holder", repr(e), "", repr(float(h)), repr(float(v))])
            w.writerow(["C_min", "", "", "", "" if self.C_min is None else repr(self.C_min)])


def _moment_batch(plan: ExperimentPlan, eps: float, ids: range, mu: float, offsets: np.ndarray):
    spec = plan.noise_spec()
    K, M = plan.ladder[0]
    grid = FourierGrid(K)
    st = MidpointStepper(plan.config(eps, K, M), plan.cs, spec.grid)
    R = plan.M_ref // M
    L = _chunk_length([R], plan.M_ref)
    w = grid.norm_weights**mu
    rngs = [path_rng(plan.seed, i) for i in ids]
    u = np.broadcast_to(to_galerkin(SpectralField(plan.ref_grid, plan.initial()), K).coeffs,
                        (len(ids), grid.n)).copy()
    norms = np.empty((M + 1, len(ids)))
    norms[0] = np.sqrt(np.sum(w * np.abs(u) ** 2, axis=-1))
    keep = {M - int(h): None for h in offsets}
    m = 0
    for start in range(0, plan.M_ref, L):
        steps = min(L, plan.M_ref - start)
        lat = block_sums(_draw_chunk(rngs, steps, spec.grid.n), R)
        inc = lattice_to_increments(spec, lat, plan.T / plan.M_ref)
        for j in range(lat.shape[1]):
            u, _ = st.step(u, inc[:, j])
            m += 1
            norms[m] = np.sqrt(np.sum(w * np.abs(u) ** 2, axis=-1))
            if m in keep:
                keep[m] = u.copy()
    diffs = np.stack([np.sqrt(np.sum(np.abs(u - keep[M - int(h)]) ** 2, axis=-1)) for h in offsets])
    return np.concatenate([norms, diffs])


def moment_diagnostic(plan: ExperimentPlan, holder_offsets: Sequence[int] = (1, 2, 4, 8, 16, 32),
                      holder_eps: Sequence[float] | None = None, threads: int = 1) -> MomentReport:
    """Moments sup_m ||u_m||_{L^p(Omega; H^mu)} on the first ladder point, and Hoelder increments.

    For the damped additive model the bound exp(-alpha t/eps) ||u0||_mu + C (alpha eps)^(-1/2)
    is fitted by the smallest C that holds at every (eps, t_m).  Hoelder
    increments are root-mean-square L2 distances between u_M and u_{M-h}.
    """
    K, M = plan.ladder[0]
    offsets = np.asarray(holder_offsets, dtype=int)
    if np.any(offsets < 1) or np.any(offsets > M):
        raise ValueError(f"Hoelder offsets must lie in [1, {M}]")
    times = np.arange(M + 1) * (plan.T / M)
    levels, holder = [], []
    for eps in plan.eps:
        out = _run_batches(lambda pl, e, ids: _moment_batch(pl, e, ids, plan.mu, offsets), plan, eps, threads)
        levels.append([lp_estimate(row, plan.p)[0] for row in out[:M + 1]])
        holder.append([lp_estimate(row, 2.0)[0] for row in out[M + 1:]])
    levels, holder = np.array(levels), np.array(holder)
    sup_levels = levels.max(axis=1)

    C_min = None
    cs = plan.cs
    if cs.is_linear_drift and cs.is_additive and cs.alpha > 0:
        u0n = math.sqrt(math.fsum(FourierGrid(K).norm_weights**plan.mu
                                  * np.abs(to_galerkin(SpectralField(plan.ref_grid, plan.initial()), K).coeffs) ** 2))
        need = [(levels[i] - np.exp(-cs.alpha * times / e) * u0n) * math.sqrt(cs.alpha * e)
                for i, e in enumerate(plan.eps)]
        C_min = float(max(0.0, np.max(need)))

    rep = MomentReport(plan.mu, plan.p, list(plan.eps), times, levels, sup_levels, offsets, holder, C_min)
    if len(plan.eps) >= 3:
        t = ErrorTable(plan.T, [ErrorRow(e, K, M, s, 0.0, plan.paths) for e, s in zip(plan.eps, sup_levels)],
                       f"{plan.name}_level")
        rep.level_fit = fit_rate(t, "eps")
    for i, e in enumerate(plan.eps):
        if holder_eps is not None and e not in holder_eps:
            continue
        if offsets.size >= 3:
            rep.holder_fits.append(_loglog_fit(offsets * (plan.T / M), holder[i], "lag",
                                               f"{plan.name}_holder_eps{e:g}"))
    return rep


def _loglog_fit(x: np.ndarray, y: np.ndarray, axis: str, name: str) -> ConvergenceReport:
    lx, ly = np.log(x), np.log(y)
    fit = stats.linregress(lx, ly)
    ci = float(stats.t.ppf(0.975, lx.size - 2) * fit.stderr) if lx.size > 2 else math.inf
    resid = ly - (fit.intercept + fit.slope * lx)
    return ConvergenceReport(axis, float(fit.slope), float(fit.intercept), float(fit.stderr), ci,
                             x, y, resid, experiment=name)


# --- observables ---------------------------------------------------------------

@dataclass
class Observables:
    mass: float | np.ndarray
    density: np.ndarray
    current: np.ndarray


def observables(u: SpectralField, eps: float) -> Observables:
    """Mass ||u||^2, density |u(x)|^2 and current eps Im(conj(u) du/dx) on the collocation grid."""
    c = u.coeffs
    vals = coeffs_to_values(c)
    dvals = coeffs_to_values(2j * np.pi * u.grid.modes * c)
    mass = np.sum(np.abs(c) ** 2, axis=-1)
    return Observables(float(mass) if mass.ndim == 0 else mass, np.abs(vals) ** 2,
                       eps * np.imag(np.conj(vals) * dvals))


def write_lemmas_csv(rows: Sequence[LemmaRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lemma", "params", "defect", "bound", "passed"])
        for r in rows:
            w.writerow([r.lemma, r.params, repr(float(r.defect)), repr(float(r.bound)), r.passed])


def calibrate_meshing(base: ExperimentPlan, mu: float, d: int, eps: float, calibration_K: Sequence[int],
                      threads: int = 1) -> tuple[float, ErrorTable]:
    """Measure the error on paired points (K, tau = N^-e) and fit the admissibility constant C."""
    e = pairing_exponent(mu, d)
    table = ErrorTable(base.T, experiment=f"{base.name}_calibration")
    for K in calibration_K:
        M = max(1, math.ceil(base.T * (2 * K + 1) ** e - 1e-9))
        plan = ExperimentPlan(table.experiment, base.cs, base.r, [eps], [(K, M)], 4 * K, 8 * M, base.paths,
                              base.seed, base.T, base.noise_scale, base.p, mu, base.u0, base.fp_tol,
                              base.fp_max_iter, base.batch_size)
        table.rows.extend(strong_error(plan, threads).rows)
    return calibrate_meshing_constant(table, mu, d), table
