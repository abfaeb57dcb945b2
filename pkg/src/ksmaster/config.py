"""Run configuration: YAML in, validated dataclasses out.

Every section is optional; missing keys take the defaults below, unknown keys
are rejected. See ``configs/default.yaml`` for the annotated full set.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ._io import dumps, sha256_bytes
from .economy import EconomyParams
from .neuralnet import NetSpec, TrainConfig
from .solver import FixedPointConfig, SampleConfig
from .transport import TransportConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    K1: int = 17
    K2: int = 10
    breakpoints: dict | None = None    # {"y1": [...], "y2": [...]} overrides the equal-mass construction
    fine_cells: int = 3000

    def __post_init__(self):
        if self.K1 < 1 or self.K2 < 1 or self.fine_cells < 2:
            raise ValueError("grid needs K1, K2 >= 1 and at least two fine cells")
        if self.breakpoints is not None:
            b = self.breakpoints
            if set(b) != {"y1", "y2"}:
                raise ValueError("explicit breakpoints need keys y1 and y2")
            if (len(b["y1"]) - 1, len(b["y2"]) - 1) != (self.K1, self.K2):
                raise ValueError("explicit breakpoints disagree with K1/K2")


@dataclass(frozen=True)
class AiyagariConfig:
    nodes: int = 600
    stretch: float = 2.0
    stencil: float = 0.05
    transport_N: int = 5
    tol: float = 1e-4


@dataclass(frozen=True)
class NetworkConfig:
    d0: int = 1
    feature_embed_dim: int = 80
    rate_embed_dim: int = 20
    capital_embed_dim: int = 150
    trunk_dims: tuple = (300, 150, 50, 20)

    def spec(self, d: int) -> NetSpec:
        return NetSpec(d=d, d0=self.d0, feature_embed_dim=self.feature_embed_dim, rate_embed_dim=self.rate_embed_dim,
                       capital_embed_dim=self.capital_embed_dim, trunk_dims=tuple(self.trunk_dims))


@dataclass(frozen=True)
class SolverConfig:
    n_samples: int = 20000
    n_outer_iterations: int = 30
    optimizer: str = "adam"
    steps: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    lr_final: float | None = 1e-4
    warm_start: str = "aiyagari"
    warm_steps: int = 2000
    refresh_fraction: float = 0.25
    holdout_fraction: float = 0.1
    tol: float = 0.0
    report_every: int = 1
    divergence_mse: float = 1e6
    mix: tuple = (0.3, 0.5, 0.2)
    dirichlet_alpha: float = 1.0
    perturb_max: float = 0.5
    transport_steps: int = 8
    x_log_fraction: float = 0.2
    x_log_range: tuple = (1e-3, 3.0)

    def fixed_point(self) -> FixedPointConfig:
        samples = SampleConfig(n_samples=self.n_samples, mix=tuple(self.mix), dirichlet_alpha=self.dirichlet_alpha,
                               perturb_max=self.perturb_max, transport_steps=self.transport_steps,
                               x_log_fraction=self.x_log_fraction, x_log_range=tuple(self.x_log_range),
                               holdout_fraction=self.holdout_fraction)
        train = TrainConfig(optimizer=self.optimizer, steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                            lr_final=self.lr_final)
        warm = TrainConfig(optimizer="adam", steps=self.warm_steps, batch_size=self.batch_size, lr=self.lr,
                           lr_final=self.lr_final)
        return FixedPointConfig(samples=samples, n_outer_iterations=self.n_outer_iterations, train=train,
                                refresh_fraction=self.refresh_fraction, report_every=self.report_every, tol=self.tol,
                                divergence_mse=self.divergence_mse, warm_start=self.warm_start, warm_train=warm)


SECTIONS = {
    "economy": EconomyParams,
    "grid": GridConfig,
    "aiyagari": AiyagariConfig,
    "transport": TransportConfig,
    "network": NetworkConfig,
    "solver": SolverConfig,
}


@dataclass(frozen=True)
class RunConfig:
    economy: EconomyParams = field(default_factory=EconomyParams)
    grid: GridConfig = field(default_factory=GridConfig)
    aiyagari: AiyagariConfig = field(default_factory=AiyagariConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    out: str = "run"

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS) - {"seed", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, typ in SECTIONS.items():
            sec = d.get(name) or {}
            if not isinstance(sec, dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            allowed = {f.name for f in fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")
            sec = {k: tuple(v) if isinstance(v, list) and k != "breakpoints" else v for k, v in sec.items()}
            try:
                kw[name] = typ(**sec)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"invalid '{name}' section: {err}") from err
        try:
            seed = int(d.get("seed", 0))
        except (TypeError, ValueError) as err:
            raise ConfigError("seed must be an integer") from err
        cfg = cls(seed=seed, out=str(d.get("out", "run")), **kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config file {path}: {err}") from err
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as err:
            raise ConfigError(f"malformed config file {path}: {err}") from err
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.grid.breakpoints is not None:
            for k in ("y1", "y2"):
                b = self.grid.breakpoints[k]
                if b[0] != self.economy.x_lo or b[-1] != self.economy.x_hi:
                    raise ConfigError("explicit breakpoints must span [x_lo, x_hi]")
        if self.aiyagari.nodes < 3 or self.aiyagari.stencil <= 0:
            raise ConfigError("aiyagari needs at least three nodes and a positive stencil")
        try:
            self.network.spec(self.d)
            self.solver.fixed_point()
        except ValueError as err:
            raise ConfigError(str(err)) from err

    @property
    def d(self) -> int:
        return self.grid.K1 + self.grid.K2 + 4

    def with_overrides(self, seed=None, out=None, d0=None, k1=None, k2=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out is not None:
            cfg = replace(cfg, out=str(out))
        if d0 is not None:
            cfg = replace(cfg, network=replace(cfg.network, d0=int(d0)))
        if k1 is not None or k2 is not None:
            g = cfg.grid
            try:
                g = replace(g, K1=int(k1 if k1 is not None else g.K1), K2=int(k2 if k2 is not None else g.K2),
                            breakpoints=None)
            except ValueError as err:
                raise ConfigError(str(err)) from err
            cfg = replace(cfg, grid=g)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = sec.to_dict() if hasattr(sec, "to_dict") else _plain(asdict(sec))
        out["seed"] = self.seed
        out["out"] = self.out
        return out

    def hash(self) -> str:
        """Digest of everything that affects results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        return sha256_bytes(dumps(d).encode())[:16]

    def snapshot(self) -> str:
        return yaml.safe_dump(json.loads(dumps(self.to_dict())), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
