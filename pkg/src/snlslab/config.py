"""YAML run configuration, validated with pydantic.

The digest that names a run directory is the SHA-256 of the validated config
serialized as canonical JSON (sorted keys).  Key order in the file is
therefore irrelevant, and ``threads`` / ``out`` are left out because they do
not affect results.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .coefficients import REGISTRY, CoefficientSet, make_coefficients
from .lab import ExperimentPlan
from .spectral import FourierGrid, SpectralField, from_grid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelCfg(_Strict):
    name: str = "linear_damped"
    params: dict = Field(default_factory=lambda: {"alpha": 1.0})

    @model_validator(mode="after")
    def _known(self):
        if self.name not in REGISTRY:
            raise ValueError(f"unknown model {self.name!r}; choose from {sorted(REGISTRY)}")
        make_coefficients(self.name, **self.params)
        return self


class NoiseCfg(_Strict):
    r: float = Field(1.5, description="decay exponent of q_k = scale (1 + lambda_k)^(-r)")
    scale: float = Field(1.0, ge=0.0)


class InitialCfg(_Strict):
    kind: Literal["zero", "plane_wave", "packet"] = "zero"
    k: int = 0
    amplitude: float = 1.0
    center: float = 0.5
    width: float = 0.1

    def field(self, K: int) -> SpectralField | None:
        grid = FourierGrid(K)
        if self.kind == "zero":
            return None
        if self.kind == "plane_wave":
            return SpectralField.unit_mode(grid, self.k, self.amplitude)
        # semiclassical packet A exp(-(x-c)^2 / (2 w^2)) exp(2 pi i k x), periodised by sampling
        x = grid.points
        dx = (x - self.center + 0.5) % 1.0 - 0.5
        vals = self.amplitude * np.exp(-dx**2 / (2 * self.width**2)) * np.exp(2j * np.pi * self.k * x)
        return from_grid(vals, grid)


class SolverCfg(_Strict):
    fp_tol: float = Field(1e-12, gt=0)
    fp_max_iter: int = Field(100, ge=1)
    p_moment: float = Field(2.0, ge=2)
    batch_size: int = Field(25, ge=1)


class ExperimentCfg(_Strict):
    name: str
    eps: list[float] = Field(min_length=1)
    K_cut: list[int] = Field(min_length=1)
    M: list[int] = Field(min_length=1)
    pairing: Literal["product", "zip"] = "product"
    K_ref: int
    M_ref: int
    noise: NoiseCfg | None = None
    mu: float = 0.0
    paths: int | None = Field(None, ge=2)
    sup_over_grid: bool = False
    expected_slope: float | None = None
    tolerance: float | None = None

    @model_validator(mode="after")
    def _ladder(self):
        if self.pairing == "zip" and len(self.K_cut) != len(self.M):
            raise ValueError("pairing 'zip' needs K_cut and M lists of equal length")
        return self

    def ladder(self) -> list[tuple[int, int]]:
        if self.pairing == "zip":
            return list(zip(self.K_cut, self.M))
        return [(K, M) for K in self.K_cut for M in self.M]


AXIS_OF = {"spatial": "N", "temporal": "tau", "combined": "N", "epsilon": "eps"}


class ConvergenceCfg(_Strict):
    spatial: list[ExperimentCfg] = Field(default_factory=list)
    temporal: list[ExperimentCfg] = Field(default_factory=list)
    combined: list[ExperimentCfg] = Field(default_factory=list)
    epsilon: list[ExperimentCfg] = Field(default_factory=list)


class LemmaCfg(_Strict):
    trials: int = Field(1000, ge=1)
    K: int = Field(64, ge=1)
    m_max: int = Field(10_000, ge=1)
    rel_tol: float = Field(1e-12, gt=0)


class MeshingCfg(_Strict):
    eps: float = Field(0.5, gt=0)
    mu: float = Field(1.0, gt=0)
    noise: NoiseCfg | None = None
    ladder_K: list[int] = Field(default_factory=lambda: [2, 4, 8, 16, 32])
    calibration_K: list[int] = Field(default_factory=lambda: [2, 4, 8])
    delta: float | None = Field(None, gt=0, description="target error; derived from target_K_cut when null")
    target_K_cut: int = 16
    delta_margin: float = Field(1.05, ge=1.0)
    max_steps: int = 10**6
    paths: int | None = Field(None, ge=2)


class MomentCfg(_Strict):
    eps: list[float] = Field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    K_cut: int = 16
    M: int = 1024
    mu: float = 0.0
    noise: NoiseCfg | None = None
    holder_offsets: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    holder_eps: list[float] | None = None
    paths: int | None = Field(None, ge=2)
    level_slope: float = -0.5
    level_tolerance: float = 0.2
    holder_slope: float = 0.5
    holder_tolerance: float = 0.15


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    paths: int = Field(200, ge=2)
    threads: int = Field(1, ge=1)
    out: str = "runs"
    T: float = Field(1.0, gt=0)
    model: ModelCfg = Field(default_factory=ModelCfg)
    noise: NoiseCfg = Field(default_factory=NoiseCfg)
    initial: InitialCfg = Field(default_factory=InitialCfg)
    solver: SolverCfg = Field(default_factory=SolverCfg)
    convergence: ConvergenceCfg = Field(default_factory=ConvergenceCfg)
    lemmas: LemmaCfg = Field(default_factory=LemmaCfg)
    meshing: MeshingCfg | None = None
    moments: MomentCfg | None = None

    @model_validator(mode="after")
    def _plans(self):
        # every experiment must build; solver preconditions are checked here, up front
        for axis in AXIS_OF:
            for exp in getattr(self.convergence, axis):
                self.plan(exp)
        if self.moments is not None:
            self.moment_plan()
        return self

    def coefficients(self) -> CoefficientSet:
        return make_coefficients(self.model.name, **self.model.params)

    def plan(self, exp: ExperimentCfg, paths: int | None = None) -> ExperimentPlan:
        noise = exp.noise or self.noise
        return ExperimentPlan(
            name=exp.name, cs=self.coefficients(), r=noise.r, eps=exp.eps, ladder=exp.ladder(),
            K_ref=exp.K_ref, M_ref=exp.M_ref, paths=paths or exp.paths or self.paths, seed=self.seed,
            T=self.T, noise_scale=noise.scale, p=self.solver.p_moment, mu=exp.mu,
            u0=self.initial.field(exp.K_ref), fp_tol=self.solver.fp_tol,
            fp_max_iter=self.solver.fp_max_iter, batch_size=self.solver.batch_size,
            sup_over_grid=exp.sup_over_grid,
        )

    def experiments(self, axis: str) -> list[ExperimentCfg]:
        if axis not in AXIS_OF:
            raise ValueError(f"unknown axis {axis!r}")
        return getattr(self.convergence, axis)

    def moment_plan(self) -> ExperimentPlan:
        mc = self.moments
        noise = mc.noise or self.noise
        return ExperimentPlan(
            name="moments", cs=self.coefficients(), r=noise.r, eps=mc.eps, ladder=[(mc.K_cut, mc.M)],
            K_ref=mc.K_cut, M_ref=mc.M, paths=mc.paths or self.paths, seed=self.seed, T=self.T,
            noise_scale=noise.scale, p=self.solver.p_moment, mu=mc.mu,
            u0=self.initial.field(mc.K_cut), fp_tol=self.solver.fp_tol,
            fp_max_iter=self.solver.fp_max_iter, batch_size=self.solver.batch_size,
        )

    def meshing_base(self) -> ExperimentPlan:
        mc = self.meshing
        noise = mc.noise or self.noise
        K = min(mc.ladder_K)
        M = int(self.T) + 1  # placeholder step count with tau < 1; meshing_check sets the real one
        return ExperimentPlan(
            name="meshing", cs=self.coefficients(), r=noise.r, eps=[mc.eps], ladder=[(K, M)], K_ref=K,
            M_ref=M, paths=mc.paths or self.paths, seed=self.seed, T=self.T, noise_scale=noise.scale,
            p=self.solver.p_moment, mu=mc.mu, u0=self.initial.field(K),
            fp_tol=self.solver.fp_tol, fp_max_iter=self.solver.fp_max_iter,
            batch_size=self.solver.batch_size,
        )

    def canonical(self) -> dict:
        return self.model_dump(mode="json", exclude={"threads", "out"})

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path, **overrides) -> RunConfig:
    """Read YAML from ``path`` and apply non-None overrides (seed, paths, out, threads)."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "paths" in overrides:
        # a command-line path count applies to every experiment
        for section in (data.get("convergence") or {}).values():
            for exp in section or []:
                if isinstance(exp, dict):
                    exp.pop("paths", None)
        for key in ("meshing", "moments"):
            if isinstance(data.get(key), dict):
                data[key].pop("paths", None)
    data.update(overrides)
    return RunConfig.model_validate(data)


def shipped_config(name: str = "acceptance.yaml") -> Path:
    """Path of a config bundled with the package."""
    return Path(str(resources.files("snlslab") / "configs" / name))
