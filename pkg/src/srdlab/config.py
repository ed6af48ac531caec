"""Declarative experiment configuration (YAML or JSON).

Unknown keys are errors.  Physics parameters have no defaults; engineering
knobs (workers, block size, output directory) do.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .drift import DriftSpec
from .errors import ConfigurationError, DomainError
from .integrator import Model, SchemeSpec, n_steps_for
from .noise import NoiseSpec
from .spectral import GridSpec, SpectralField

EXPERIMENTS = ("simulate", "couple", "harnack", "ergodic", "noise-diag", "validate-drift")
BUNDLED = ("allen-cahn-p2", "linear-ou", "allen-cahn-p4")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DriftConfig(_Strict):
    poly_coeffs: list[float]
    L_f: float
    theta_diss: float
    q: float
    L_f_prime: float
    lipschitz: str = "none"
    lipschitz_coeff: float = 0.0


class NoiseConfig(_Strict):
    theta_noise: float
    n_modes: int = Field(gt=0)
    amplitude: float = 1.0

    @field_validator("theta_noise")
    @classmethod
    def _theta(cls, v: float) -> float:
        if not v < 0.5:
            raise ValueError(
                f"theta_noise={v} violates theta < 1/2: the stochastic convolution series diverges"
            )
        return v


class GridConfig(_Strict):
    n_quad: int | None = None


class ModelConfig(_Strict):
    drift: DriftConfig
    noise: NoiseConfig
    grid: GridConfig = GridConfig()
    p: float = Field(ge=2)


class SchemeConfig(_Strict):
    dt: float = Field(gt=0)
    scheme: Literal["exponential_euler", "splitting_reference"] = "exponential_euler"
    taming: float | None = None


Field_ = dict[int, float]  # sparse coefficient vector, mode index -> value


class SimulateParams(_Strict):
    T: float = Field(gt=0)
    x0: Field_ = {}
    y0: Field_ | None = None
    n_paths: int = Field(ge=2)
    observe_times: list[float]
    contraction_tol_factor: float = 5.0


class CoupleParams(_Strict):
    T: float = Field(gt=0)
    x0: Field_ = {}
    y0: Field_
    n_paths: int = Field(ge=2)
    eps_couple: float = Field(default=1e-6, gt=0)


class GradientParams(_Strict):
    direction: Field_
    eps: float = Field(gt=0)
    n_paths: int = Field(ge=2)


class HarnackParams(_Strict):
    T: float = Field(gt=0)
    x0: Field_ = {}
    y0: Field_
    n_paths: int = Field(ge=2)
    n_paths_coupling: int = Field(ge=2)
    s_values: list[float] = [1.5, 2.0]
    ball_radius: float = 0.3
    ball_floor: float = 0.1
    gradient: GradientParams | None = None

    @field_validator("s_values")
    @classmethod
    def _s(cls, v):
        if any(s <= 1 for s in v):
            raise ValueError("every power exponent s must exceed 1")
        return v


class ErgodicParams(_Strict):
    horizon: float = Field(gt=0)
    burn_in: float = 0.0
    observation_stride: float = Field(gt=0)
    horizons: list[float] = []
    n_batches: int = Field(default=10, ge=8)
    x0: Field_
    y0: Field_
    tv_times: list[float] = []
    tv_x0: Field_ = {}
    tv_y0: Field_ = {}
    tv_paths: int = Field(default=500, ge=2)
    control: bool = True


class NoiseDiagParams(_Strict):
    t: float = Field(gt=0)
    n_paths: int = Field(ge=2)
    p_norm: float = Field(default=2.0, ge=2)
    moment: int = Field(default=2, ge=1)
    beta0: float | None = None
    dt_transition: float = Field(default=1e-3, gt=0)


class ValidateDriftParams(_Strict):
    grid_radius: float = Field(default=50.0, gt=0)
    grid_step: float = Field(default=0.05, gt=0)


class ExperimentsConfig(_Strict):
    simulate: SimulateParams | None = None
    couple: CoupleParams | None = None
    harnack: HarnackParams | None = None
    ergodic: ErgodicParams | None = None
    noise_diag: NoiseDiagParams | None = Field(default=None, alias="noise-diag")
    validate_drift: ValidateDriftParams | None = Field(default=None, alias="validate-drift")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class ExperimentConfig(_Strict):
    name: str = "experiment"
    model: ModelConfig
    scheme: SchemeConfig
    seed: int = Field(ge=0, lt=2**64)
    n_workers: int = Field(default=1, ge=1)
    block_size: int = Field(default=500, ge=1)
    experiments: ExperimentsConfig

    @model_validator(mode="after")
    def _horizons(self):
        dt = self.scheme.dt
        ex = self.experiments
        checks = []
        if ex.simulate:
            checks += [("experiments.simulate.T", ex.simulate.T)]
            checks += [(f"experiments.simulate.observe_times[{i}]", t)
                       for i, t in enumerate(ex.simulate.observe_times) if t > 0]
        if ex.couple:
            checks.append(("experiments.couple.T", ex.couple.T))
        if ex.harnack:
            checks.append(("experiments.harnack.T", ex.harnack.T))
        if ex.ergodic:
            checks.append(("experiments.ergodic.horizon", ex.ergodic.horizon))
            checks.append(("experiments.ergodic.observation_stride", ex.ergodic.observation_stride))
            checks += [(f"experiments.ergodic.tv_times[{i}]", t) for i, t in enumerate(ex.ergodic.tv_times)]
        for path, T in checks:
            try:
                n_steps_for(T, dt)
            except (ConfigurationError, DomainError) as exc:
                raise ValueError(f"{path}: {exc}") from None
        if ex.noise_diag and ex.noise_diag.beta0 is not None:
            b = ex.noise_diag.beta0
            if not (0 < b and b + self.model.noise.theta_noise < 0.5):
                raise ValueError("experiments.noise-diag.beta0: need 0 < beta0 and beta0 + theta_noise < 1/2")
        return self

    # -- derived objects ------------------------------------------------
    def drift_spec(self, validate: bool = True) -> DriftSpec:
        d = self.model.drift
        return DriftSpec(tuple(d.poly_coeffs), d.L_f, d.theta_diss, d.q, d.L_f_prime, d.lipschitz,
                         d.lipschitz_coeff, validate=validate)

    def build_model(self, validate: bool = True) -> Model:
        n = self.model.noise
        noise = NoiseSpec(n.theta_noise, n.n_modes, seed=self.seed, amplitude=n.amplitude)
        grid = GridSpec(n.n_modes, self.model.grid.n_quad)
        return Model(grid, self.drift_spec(validate), noise, self.model.p)

    def build_scheme(self) -> SchemeSpec:
        s = self.scheme
        return SchemeSpec(s.dt, s.scheme, s.taming)

    def field(self, coeffs: dict[int, float]) -> SpectralField:
        n = self.model.noise.n_modes
        out = [0.0] * n
        for k, v in coeffs.items():
            if not 1 <= k <= n:
                raise ConfigurationError(f"mode index {k} outside 1..{n}")
            out[k - 1] = float(v)
        return SpectralField(out)

    def experiment(self, name: str):
        if name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
        params = getattr(self.experiments, name.replace("-", "_"))
        if params is None:
            raise ConfigurationError(f"config has no '{name}' experiment section")
        return params

    def physics_dict(self) -> dict:
        """Everything that determines the numbers (excludes worker count)."""
        d = self.model_dump(mode="json", by_alias=True)
        d.pop("n_workers", None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc or '<root>'}: {err['msg']}")
    return "\n".join(lines)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("srdlab") / "configs" / f"{name}.yaml"))


def load_raw(source: str | Path) -> dict:
    """Read a config file; bare names refer to the bundled benchmark configs."""
    path = Path(source)
    if not path.exists() and str(source) in BUNDLED:
        path = bundled_path(str(source))
    if not path.exists():
        raise ConfigurationError(f"config file not found: {source}")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    return data


def parse_config(data: dict, seed: int | None = None, n_workers: int | None = None) -> ExperimentConfig:
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if n_workers is not None:
        data["n_workers"] = n_workers
    cfg = ExperimentConfig.model_validate(data)
    # drift certificates run here, before any computation
    try:
        cfg.drift_spec(validate=True)
    except (ConfigurationError, DomainError) as exc:
        raise ConfigurationError(f"model.drift: {exc}") from None
    return cfg


def load_config(source, seed: int | None = None, n_workers: int | None = None) -> ExperimentConfig:
    return parse_config(load_raw(source), seed, n_workers)
