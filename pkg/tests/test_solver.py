from __future__ import annotations

import numpy as np
import pytest

from oracles import mode_factors, scalar_recursion
from snlslab.coefficients import drift_coeffs, free, linear_damped, saturated
from snlslab.noise import NoiseSpec, sample_path
from snlslab.solver import (
    ConfigError,
    FixedPointError,
    IntegrationError,
    MidpointStepper,
    SolverConfig,
    fixed_point_solve,
    integrate,
    midpoint_step,
    reference_solve,
)
from snlslab.spectral import FourierGrid, SpectralField, embed, random_field, sobolev_norm

GRID = FourierGrid(8)


def test_config_gates():
    with pytest.raises(ConfigError):
        SolverConfig(eps=0.5, T=1.0, M=1, K_cut=4)  # tau = 1
    with pytest.raises(ConfigError):
        SolverConfig(eps=-1.0, T=1.0, M=10, K_cut=4)
    with pytest.raises(ConfigError):
        SolverConfig(eps=0.5, T=1.0, M=10, K_cut=4, p_moment=1.5)
    cfg = SolverConfig(eps=0.01, T=1.0, M=10, K_cut=4)
    with pytest.raises(ConfigError, match="contraction"):
        cfg.check(saturated(1.0))
    cfg.check(linear_damped(1.0))  # closed form, no gate


def test_fixed_point_constant_map_one_iteration():
    c = np.array([1.0 + 2j, 3.0])
    res = fixed_point_solve(lambda x: c, np.zeros(2, complex), 1e-12, 10)
    assert res.iterations == 1 and np.array_equal(res.value, c)


def test_fixed_point_linear_contraction_halves():
    b = np.array([1.0, -2.0, 0.5j])
    res = fixed_point_solve(lambda x: 0.5 * x + b, np.zeros(3, complex), 1e-12, 100)
    assert np.allclose(res.value, 2 * b, atol=1e-11)
    ratios = np.array(res.history[1:]) / np.array(res.history[:-1])
    assert np.allclose(ratios, 0.5, rtol=1e-6)


def test_fixed_point_failure_carries_history():
    with pytest.raises(FixedPointError) as exc:
        fixed_point_solve(lambda x: 2 * x + 1, np.zeros(2, complex), 1e-12, 5)
    assert len(exc.value.history) == 5


def test_fixed_point_per_row_masks():
    x0 = np.zeros((2, 3), complex)
    scale = np.array([[0.0], [0.9]])
    res = fixed_point_solve(lambda x: scale * x + 1.0, x0, 1e-10, 500)
    assert res.iterations[0] == 1 and res.iterations[1] > 100


def test_free_flow_conserves_mass():
    u = random_field(np.random.default_rng(0), 1.0, GRID)
    st = MidpointStepper(SolverConfig(0.5, 1.0, 1000, 8), free())
    c = u.coeffs
    m0 = np.sum(np.abs(c) ** 2)
    for _ in range(1000):
        new, _ = st.step(c, None)
        assert abs(np.sum(np.abs(new) ** 2) - np.sum(np.abs(c) ** 2)) <= 1e-13 * m0
        c = new


def test_free_step_is_cayley():
    u = random_field(np.random.default_rng(1), 1.0, GRID)
    cfg = SolverConfig(0.5, 1.0, 100, 8)
    out = midpoint_step(u, SpectralField.zeros(GRID), cfg, free())
    x = 0.5 * cfg.tau * GRID.eigenvalues / 4
    assert np.allclose(out.coeffs, u.coeffs * (1 - 1j * x) / (1 + 1j * x), atol=1e-15)


def test_linear_drift_per_mode_factor():
    u = random_field(np.random.default_rng(2), 1.0, GRID)
    cfg = SolverConfig(0.5, 1.0, 50, 8)
    cs = linear_damped(2.0, diffusion="zero")
    R, _ = mode_factors(GRID.modes, 0.5, 2.0, cfg.tau)
    out = midpoint_step(u, SpectralField.zeros(GRID), cfg, cs)
    assert np.allclose(out.coeffs, R * u.coeffs, atol=1e-15)
    slow = MidpointStepper(cfg, cs, generic=True).step(u.coeffs, None)[0]
    assert np.max(np.abs(slow - out.coeffs)) < 1e-11


def test_origin_is_fixed():
    cfg = SolverConfig(0.5, 1.0, 50, 8)
    for cs in (saturated(1.0), linear_damped(1.0)):
        out = midpoint_step(SpectralField.zeros(GRID), SpectralField.zeros(GRID), cfg, cs)
        assert np.all(out.coeffs == 0)


def test_midpoint_residual_and_saturated_iterations():
    eps = 0.5
    cfg = SolverConfig(eps, 1.0, 20, 8)  # tau = eps / 10
    cs = saturated(1.0, diffusion="inverse_density")
    st = MidpointStepper(cfg, cs)
    rng = np.random.default_rng(3)
    u = random_field(rng, 1.0, GRID).coeffs * 3
    dW = random_field(rng, 1.0, GRID).coeffs * 0.1
    new, iters = st.step(u, dW)
    assert iters <= 25
    lhs = new - st.S * u - st.D * st.noise_term(u, dW)
    rhs = (1j * cfg.tau / eps) * st.T * drift_coeffs(cs, GRID, 0.5 * (u + new))
    assert np.linalg.norm(lhs - rhs) <= 1e-11 * (1 + np.linalg.norm(new))


def test_generic_path_matches_fast_path():
    spec = NoiseSpec.power(GRID, 1.5)
    path = sample_path(spec, 4, 200, 1.0)
    cfg = SolverConfig(0.5, 1.0, 200, 8)
    u0 = random_field(np.random.default_rng(5), 1.0, GRID)
    fast = integrate(u0, path, 1, cfg, linear_damped(1.0)).final.coeffs
    st = MidpointStepper(cfg, linear_damped(1.0), generic=True)
    u = u0.coeffs
    for dW in path.coarse_increments(1):
        u, _ = st.step(u, dW)
    assert np.max(np.abs(u - fast)) < 1e-11


def test_one_step_integrate_equals_midpoint_step():
    spec = NoiseSpec.power(GRID, 1.5)
    path = sample_path(spec, 6, 4, 0.5)
    cfg = SolverConfig(2.0, 0.5, 1, 8)
    cs = saturated(1.0)
    u0 = random_field(np.random.default_rng(7), 1.0, GRID)
    a = integrate(u0, path, 4, cfg, cs).final
    b = midpoint_step(u0, path.coarse_increment(0, 4), cfg, cs)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_trajectory_matches_scalar_recursion():
    spec = NoiseSpec.power(FourierGrid(16), 1.5)
    path = sample_path(spec, 8, 2000, 1.0)
    cfg = SolverConfig(0.5, 1.0, 1000, 8)
    u0 = random_field(np.random.default_rng(9), 1.0, GRID)
    tr = integrate(u0, path, 2, cfg, linear_damped(1.0))
    incs = path.coarse_increments(2)[:, FourierGrid(16).window(8)]
    oracle = scalar_recursion(u0.coeffs, incs, 0.5, 1.0, cfg.tau)
    assert np.max(np.abs(tr.final.coeffs - oracle)) < 1e-10


def test_reference_against_itself_and_oracle():
    g = FourierGrid(12)
    spec = NoiseSpec.power(g, 2.0)
    path = sample_path(spec, 10, 512, 1.0)
    cfg = SolverConfig(0.5, 1.0, 512, 12)
    ref = reference_solve(SpectralField.zeros(g), path, cfg, linear_damped(1.0))
    again = reference_solve(SpectralField.zeros(g), path, cfg, linear_damped(1.0))
    assert sobolev_norm(ref - again, 0) == 0.0
    oracle = scalar_recursion(np.zeros(g.n), path.coarse_increments(1), 0.5, 1.0, cfg.tau)
    assert np.max(np.abs(ref.coeffs - oracle)) < 1e-10


def test_refinement_gap_shrinks():
    spec = NoiseSpec.power(GRID, 3.0)
    path = sample_path(spec, 11, 1024, 1.0)
    cs = saturated(1.0)
    u0 = SpectralField.unit_mode(GRID, 1, 0.8)

    def run(M):
        return integrate(u0, path, 1024 // M, SolverConfig(0.5, 1.0, M, 8), cs).final

    gaps = [sobolev_norm(run(M) - run(2 * M), 0) for M in (32, 64, 128)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_determinism_and_snapshots(tmp_path):
    spec = NoiseSpec.power(GRID, 1.5)
    path = sample_path(spec, 12, 64, 1.0)
    cfg = SolverConfig(0.5, 1.0, 32, 4)
    cs = saturated(0.5, diffusion="inverse_density")
    u0 = random_field(np.random.default_rng(13), 1.0, GRID)
    a = integrate(u0, path, 2, cfg, cs, snapshot_every=8)
    b = integrate(u0, path, 2, cfg, cs, snapshot_every=8)
    assert np.array_equal(a.snapshots, b.snapshots)
    assert list(a.steps) == [0, 8, 16, 24, 32]
    assert a.times[-1] == pytest.approx(1.0)
    assert a.fp_iterations.shape == (32,) and a.fp_iterations.min() >= 1
    a.write_csv(tmp_path / "traj.csv")
    a.write_grid_csv(tmp_path / "grid.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,mode,re,im" and len(lines) == 1 + 5 * 9
    assert (tmp_path / "grid.csv").read_text().startswith("t,x,density")
    with pytest.raises(KeyError):
        a.at(3)


def test_galerkin_projection_of_fine_initial_data():
    spec = NoiseSpec.power(FourierGrid(4), 1.5)
    path = sample_path(spec, 1, 8, 1.0)
    u0 = random_field(np.random.default_rng(0), 1.0, FourierGrid(10))
    tr = integrate(u0, path, 1, SolverConfig(0.5, 1.0, 8, 4), linear_damped(1.0))
    assert tr.grid.K == 4
    coarse_u0 = SpectralField(FourierGrid(2), np.ones(5))
    tr2 = integrate(coarse_u0, path, 1, SolverConfig(0.5, 1.0, 8, 4), free())
    assert np.array_equal(tr2.snapshots[0], embed(coarse_u0, FourierGrid(4)).coeffs)


def test_integrate_errors():
    spec = NoiseSpec.power(GRID, 1.5)
    path = sample_path(spec, 1, 10, 1.0)
    with pytest.raises(ValueError):
        integrate(SpectralField.zeros(GRID), path, 3, SolverConfig(0.5, 1.0, 3, 4), free())
    cfg = SolverConfig(0.5, 1.0, 10, 8, fp_max_iter=1, fp_tol=1e-15)
    u0 = random_field(np.random.default_rng(2), 0.5, GRID)
    with pytest.raises(IntegrationError) as exc:
        integrate(u0 * 5, path, 1, cfg, saturated(1.0))
    assert exc.value.step == 0
