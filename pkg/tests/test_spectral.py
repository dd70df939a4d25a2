from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snlslab.spectral import (
    FourierGrid,
    SpectralField,
    eigenvalue,
    embed,
    from_grid,
    load_field,
    project,
    random_field,
    read_field_csv,
    restrict,
    save_field,
    sobolev_norm,
    to_grid,
    write_field_csv,
)


def test_eigenvalue_scalar_and_tuple():
    assert eigenvalue(0) == 0.0
    assert eigenvalue(3) == pytest.approx(36 * np.pi**2, rel=1e-15)
    assert eigenvalue((1, 2)) == pytest.approx(20 * np.pi**2, rel=1e-15)


def test_grid_layout():
    g = FourierGrid(3)
    assert g.n == 7 and g.N == 7
    assert list(g.modes) == [-3, -2, -1, 0, 1, 2, 3]
    assert g.norm_weights[3] == 1.0
    assert g.eigenvalues[4] == pytest.approx(4 * np.pi**2)
    assert g.window(1) == slice(2, 5)
    with pytest.raises(ValueError):
        g.window(4)
    with pytest.raises(ValueError):
        FourierGrid(-1)
    with pytest.raises(NotImplementedError):
        FourierGrid(2, d=2)


def test_unit_mode_is_plane_wave():
    g = FourierGrid(4)
    v = to_grid(SpectralField.unit_mode(g, 2))
    assert np.allclose(v, np.exp(2j * np.pi * 2 * g.points), atol=1e-14)


def test_sobolev_norm_of_unit_mode():
    g = FourierGrid(5)
    for k in (0, 1, -3):
        u = SpectralField.unit_mode(g, k, 2.0)
        w = 1.0 if k == 0 else eigenvalue(k)
        assert sobolev_norm(u, 1.5) == pytest.approx(2.0 * w**0.75, rel=1e-14)
    with pytest.raises(ValueError):
        sobolev_norm(u, -0.1)


@settings(max_examples=50, deadline=None)
@given(K=st.integers(0, 20), seed=st.integers(0, 2**32 - 1), r=st.floats(0.0, 3.0))
def test_grid_round_trip(K, seed, r):
    g = FourierGrid(K)
    u = random_field(np.random.default_rng(seed), r, g)
    back = from_grid(to_grid(u), g)
    assert np.max(np.abs(back.coeffs - u.coeffs)) <= 1e-13 * (1 + np.max(np.abs(u.coeffs)))


def test_real_field_has_symmetric_coefficients():
    g = FourierGrid(6)
    x = g.points
    u = from_grid(np.cos(2 * np.pi * x) + 0.3 * np.sin(4 * np.pi * x), g)
    assert np.allclose(u.coeffs, np.conj(u.coeffs[::-1]), atol=1e-15)


def test_project_restrict_embed():
    g = FourierGrid(6)
    u = random_field(np.random.default_rng(1), 1.0, g)
    p = project(u, 2)
    assert np.all(p.coeffs[:4] == 0) and np.all(p.coeffs[-4:] == 0)
    r = restrict(u, 2)
    assert r.grid.K == 2 and np.array_equal(r.coeffs, u.coeffs[4:9])
    e = embed(r, g)
    assert np.array_equal(e.coeffs, p.coeffs)
    assert sobolev_norm(p, 0.0) <= sobolev_norm(u, 0.0)
    with pytest.raises(ValueError):
        embed(u, FourierGrid(2))


def test_batched_fields():
    g = FourierGrid(3)
    u = random_field(np.random.default_rng(2), 1.0, g, batch=(4,))
    assert u.batch_shape == (4,)
    norms = sobolev_norm(u, 0.0)
    assert norms.shape == (4,)
    assert np.allclose(from_grid(to_grid(u), g).coeffs, u.coeffs, atol=1e-14)


def test_field_validation():
    g = FourierGrid(2)
    with pytest.raises(ValueError):
        SpectralField(g, np.zeros(4))
    with pytest.raises(ValueError):
        SpectralField(g, np.array([0, 0, np.nan, 0, 0]))
    with pytest.raises(ValueError):
        from_grid(np.zeros(4), g)
    a, b = SpectralField.zeros(g), SpectralField.zeros(FourierGrid(3))
    with pytest.raises(ValueError):
        a + b


def test_csv_and_npy_round_trip_exact(tmp_path):
    u = random_field(np.random.default_rng(3), 0.5, FourierGrid(7))
    write_field_csv(u, tmp_path / "u.csv")
    assert np.array_equal(read_field_csv(tmp_path / "u.csv").coeffs, u.coeffs)
    save_field(u, tmp_path / "u.npy")
    assert np.array_equal(load_field(tmp_path / "u.npy").coeffs, u.coeffs)


def test_parseval_on_grid():
    g = FourierGrid(9)
    u = random_field(np.random.default_rng(4), 0.3, g)
    assert np.mean(np.abs(to_grid(u)) ** 2) == pytest.approx(sobolev_norm(u, 0) ** 2, rel=1e-13)
