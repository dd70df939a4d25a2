"""Drift F and diffusion G as Nemytskii operators, with declared constants.

Models in the registry are globally Lipschitz in L2 and grow linearly in the
fractional norms.  Linear drift ``F(u) = i alpha u`` and constant diffusion
``G(u) = c Id`` are flagged so the solver can bypass grid transforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import NoiseSpec, weighted_hs_norm
from .spectral import (
    FourierGrid,
    SpectralField,
    coeffs_to_values,
    random_field,
    sobolev_norm,
    values_to_coeffs,
)

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Drift and diffusion of the equation.

    ``drift(x, u)`` and ``diffusion(u)`` act pointwise on grid values.  When
    ``alpha`` is set the drift is exactly ``i alpha u``; when ``noise_scale``
    is set the diffusion is exactly ``noise_scale * Id``.
    """

    name: str
    L1: float
    g_sup: float
    g_lip: float
    mu_max: float = 3.0
    drift: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    diffusion: Callable[[np.ndarray], np.ndarray] | None = None
    alpha: float | None = None
    noise_scale: float | None = None
    params: dict = field(default_factory=dict)

    @property
    def is_linear_drift(self) -> bool:
        return self.alpha is not None

    @property
    def is_additive(self) -> bool:
        return self.noise_scale is not None

    def L2(self, noise: NoiseSpec, mu: float = 1.0) -> float:
        """Declared diffusion constant for ``noise`` (Lipschitz and growth)."""
        if self.is_additive:
            return abs(self.noise_scale) * weighted_hs_norm(noise, mu).value
        lip = self.g_lip * math.sqrt(noise.trace)
        # ||g(z) g_j||_1 <= sqrt2 (1 + 2 pi |k_j|) max(sup|g|, Lip g) (1 + ||z||_1)
        k = np.abs(noise.grid.modes)
        w1 = math.fsum(noise.q * (1.0 + 2.0 * np.pi * k) ** 2)
        growth = SQRT2 * max(self.g_sup, self.g_lip) * math.sqrt(w1)
        return max(lip, growth)


def apply_drift(cs: CoefficientSet, u: SpectralField) -> SpectralField:
    """F(u): ``i alpha u`` directly, otherwise f(x, u(x)) on the collocation grid."""
    return u.with_coeffs(drift_coeffs(cs, u.grid, u.coeffs))


def drift_coeffs(cs: CoefficientSet, grid: FourierGrid, coeffs: np.ndarray) -> np.ndarray:
    if cs.is_linear_drift:
        return 1j * cs.alpha * coeffs
    if cs.drift is None:
        return np.zeros_like(coeffs)
    return values_to_coeffs(cs.drift(grid.points, coeffs_to_values(coeffs)))


def apply_diffusion_increment(cs: CoefficientSet, u: SpectralField, dW: SpectralField) -> SpectralField:
    """G(u) dW = g(u(x)) dW(x), evaluated on the collocation grid."""
    if u.grid != dW.grid:
        raise ValueError(f"grid mismatch: u on K={u.grid.K}, dW on K={dW.grid.K}")
    return u.with_coeffs(diffusion_coeffs(cs, u.coeffs, dW.coeffs))


def diffusion_coeffs(cs: CoefficientSet, u: np.ndarray, dW: np.ndarray) -> np.ndarray:
    if cs.is_additive:
        return dW if cs.noise_scale == 1.0 else cs.noise_scale * dW
    if cs.diffusion is None:
        return np.zeros(np.broadcast_shapes(u.shape, dW.shape), dtype=np.complex128)
    return values_to_coeffs(cs.diffusion(coeffs_to_values(u)) * coeffs_to_values(dW))


# --- registry -----------------------------------------------------------------

def _inverse_density(u):
    return 1.0 / (1.0 + np.abs(u) ** 2)


_DIFFUSIONS = {
    # name: (factory(params) -> (callable | None, noise_scale | None, sup|g|, Lip g))
    "identity": lambda p: (None, 1.0, 1.0, 0.0),
    "constant": lambda p: (None, float(p.get("c", 1.0)), abs(float(p.get("c", 1.0))), 0.0),
    "zero": lambda p: (None, 0.0, 0.0, 0.0),
    # |grad (1 + |u|^2)^{-1}| peaks at |u| = 1/sqrt3 with value 3 sqrt3 / 8
    "inverse_density": lambda p: (_inverse_density, None, 1.0, 3.0 * math.sqrt(3.0) / 8.0),
}


def _with_diffusion(name: str, params: dict, **kw) -> CoefficientSet:
    kind = params.get("diffusion", "identity")
    if kind not in _DIFFUSIONS:
        raise ValueError(f"unknown diffusion {kind!r}; choose from {sorted(_DIFFUSIONS)}")
    g, scale, g_sup, g_lip = _DIFFUSIONS[kind](params)
    return CoefficientSet(name=name, diffusion=g, noise_scale=scale, g_sup=g_sup, g_lip=g_lip,
                          params=dict(params), **kw)


def linear_damped(alpha: float = 1.0, **params) -> CoefficientSet:
    if alpha < 0:
        raise ValueError(f"damping alpha must be nonnegative, got {alpha}")
    return _with_diffusion("linear_damped", {"alpha": alpha, **params}, L1=abs(alpha), alpha=float(alpha))


def free(**params) -> CoefficientSet:
    """F = 0, G = 0: the free Schroedinger flow."""
    return CoefficientSet(name="free", L1=0.0, g_sup=0.0, g_lip=0.0, alpha=0.0, noise_scale=0.0,
                          params=dict(params))


def potential(v=(0.0, 1.0), **params) -> CoefficientSet:
    """f(x, u) = V(x) u with V(x) = sum_j v_j cos(2 pi j x)."""
    v = np.asarray(v, dtype=float)
    j = np.arange(len(v))

    def f(x, u):
        V = np.cos(2.0 * np.pi * np.multiply.outer(j, x)).T @ v
        return V * u

    L1 = float(np.sum(np.abs(v) * (2.0 + 2.0 * np.pi * j)))
    return _with_diffusion("potential", {"v": v.tolist(), **params}, L1=L1, drift=f)


def saturated(gamma: float = 1.0, **params) -> CoefficientSet:
    """f(x, u) = gamma u / (1 + |u|^2); Lipschitz with constant gamma, declared 2 gamma."""

    def f(x, u):
        return gamma * u / (1.0 + np.abs(u) ** 2)

    return _with_diffusion("saturated", {"gamma": gamma, **params}, L1=2.0 * abs(gamma), drift=f)


REGISTRY: dict[str, Callable[..., CoefficientSet]] = {
    "linear_damped": linear_damped,
    "free": free,
    "potential": potential,
    "saturated": saturated,
}


def make_coefficients(name: str, **params) -> CoefficientSet:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)


# --- assumption validation ----------------------------------------------------

class AssumptionViolation(Exception):
    def __init__(self, report: "AssumptionReport"):
        super().__init__(report.summary())
        self.report = report


@dataclass
class AssumptionReport:
    model: str
    mu: float
    samples: int
    declared: dict[str, float]
    worst: dict[str, float]
    ok: bool
    witness: dict | None = None
    diagnostics: list[str] = field(default_factory=list)

    def summary(self) -> str:
        parts = [f"{k}: worst {self.worst[k]:.6g} vs declared {self.declared[k]:.6g}" for k in self.worst]
        status = "ok" if self.ok else "VIOLATED"
        return f"{self.model} (mu={self.mu:g}) {status}; " + "; ".join(parts + self.diagnostics)

    def raise_for_violation(self) -> None:
        if not self.ok:
            raise AssumptionViolation(self)


def hs_diffusion_norm(cs: CoefficientSet, u: SpectralField, noise: NoiseSpec, mu: float) -> float:
    """||G(u)||_{L_2^mu} = sqrt(sum_j q_j ||g(u) g_j||_mu^2)."""
    if cs.is_additive:
        return abs(cs.noise_scale) * weighted_hs_norm(noise, mu).value
    grid = u.grid
    if noise.grid != grid:
        raise ValueError("noise and field must share a grid")
    total = []
    for j in range(grid.n):
        if noise.q[j] == 0.0:
            continue
        xi = np.zeros(grid.n)
        xi[j] = 1.0
        basis = NoiseSpec(grid, np.ones(grid.n)).assemble(xi)
        gu = diffusion_coeffs(cs, u.coeffs, basis)
        total.append(noise.q[j] * sobolev_norm(SpectralField(grid, gu), mu) ** 2)
    return math.sqrt(math.fsum(total))


def hs_diffusion_lipschitz(cs: CoefficientSet, u: SpectralField, v: SpectralField, noise: NoiseSpec) -> float:
    """||G(u) - G(v)||_{L_2^0}.  sum_j q_j |g_j(x)|^2 = tr Q, so this is sqrt(tr Q) ||g(u) - g(v)||."""
    if cs.is_additive:
        return 0.0
    if cs.diffusion is None:
        return 0.0
    dg = cs.diffusion(coeffs_to_values(u.coeffs)) - cs.diffusion(coeffs_to_values(v.coeffs))
    return math.sqrt(noise.trace) * float(np.sqrt(np.mean(np.abs(dg) ** 2)))


def validate_assumption(cs: CoefficientSet, mu: float, samples: int, rng: np.random.Generator,
                        noise: NoiseSpec | None = None, K: int = 16) -> AssumptionReport:
    """Probe the Lipschitz and linear-growth bounds on random field pairs.

    Fields are drawn with random decay and amplitudes spread over [0.1, 10]
    so that the saturation regime of nonlinear models is exercised.  The
    report carries the worst observed ratio per bound and, on failure, the
    witnessing pair.
    """
    if mu > cs.mu_max:
        raise ValueError(f"mu={mu} exceeds the model's mu_max={cs.mu_max}")
    grid = noise.grid if noise is not None else FourierGrid(K)
    declared = {"drift_lipschitz": cs.L1, "drift_growth": cs.L1}
    worst = {"drift_lipschitz": 0.0, "drift_growth": 0.0}
    diagnostics: list[str] = []
    if noise is not None:
        L2 = cs.L2(noise, mu)
        declared.update(diffusion_lipschitz=L2, diffusion_growth=L2)
        worst.update(diffusion_lipschitz=0.0, diffusion_growth=0.0)
        hs = weighted_hs_norm(noise, mu)
        if cs.is_additive and cs.noise_scale != 0.0 and not hs.converges:
            diagnostics.append(f"additive noise fails the Hilbert-Schmidt condition at mu={mu:g}: {hs.diagnostic}")
    witness = None
    for _ in range(samples):
        scale_u, scale_v = 10 ** rng.uniform(-1, 1, size=2)
        u = random_field(rng, rng.uniform(0.5, 3.0), grid) * scale_u
        v = random_field(rng, rng.uniform(0.5, 3.0), grid) * scale_v
        du = sobolev_norm(u - v, 0.0)
        ratios = {
            "drift_lipschitz": sobolev_norm(apply_drift(cs, u) - apply_drift(cs, v), 0.0) / du,
            "drift_growth": sobolev_norm(apply_drift(cs, u), mu) / (1.0 + sobolev_norm(u, mu)),
        }
        if noise is not None:
            ratios["diffusion_lipschitz"] = hs_diffusion_lipschitz(cs, u, v, noise) / du
            ratios["diffusion_growth"] = hs_diffusion_norm(cs, u, noise, mu) / (1.0 + sobolev_norm(u, mu))
        for key, val in ratios.items():
            if val > worst[key]:
                worst[key] = val
                if val > declared[key] * (1.0 + 1e-9) and witness is None:
                    witness = {"bound": key, "ratio": val, "u": u, "v": v}
    ok = witness is None and not diagnostics
    return AssumptionReport(cs.name, mu, samples, declared, worst, ok, witness, diagnostics)
