"""Run configuration: nested dataclasses loaded from TOML or JSON.

Negative Lipschitz constants mean "estimate from samples"; ``eta_z = 0`` and
``rho_* = 0`` mean "same as the state (resp. internal input) spacing".
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomli_w

BENCHMARKS = (1, 2)


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    benchmark: int = 2
    n: int = 4
    a: float = 0.0
    b: float = 32.0


@dataclass
class GridConfig:
    eta_x: float = 1.0
    eta_u: float = 1.0
    eta_w: float = 1.0
    rho_x: float = 0.0
    rho_w: float = 0.0
    eta_z: float = 2.0


@dataclass
class SamplingConfig:
    n_c: int = 100
    n_i: int = 10_000
    n_fit: int = 20
    seed: int = 0


@dataclass
class LassoConfig:
    alpha_grid: list = field(default_factory=lambda: [0.0])
    folds: int = 5


@dataclass
class DecompositionConfig:
    sigma: int = 4
    mode: str = "tree"


@dataclass
class LipschitzConfig:
    delta: float = 1e-3
    batches: int = 50
    pairs: int = 200
    L_x: float = -1.0
    L_w: float = -1.0
    L_M: float = 1.0


@dataclass
class SynthesisConfig:
    enabled: bool = True
    radius: float = 2.5
    center_min: int = 0
    center_max: int = 31
    strict: bool = False
    horizon: int = 100
    rollouts: int = 100
    x0: list = field(default_factory=list)


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    lasso: LassoConfig = field(default_factory=LassoConfig)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    backend: str = "auto"
    theta_max: float = 1e6
    jobs: int = 0

    # derived values ----------------------------------------------------
    @property
    def eta_z(self) -> float:
        return self.grid.eta_z if self.grid.eta_z > 0 else self.grid.eta_x

    def validate(self) -> "RunConfig":
        g, s = self.grid, self.sampling
        if self.network.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.network.benchmark}")
        if self.network.n < 1:
            raise ConfigError("network.n must be positive")
        for name in ("eta_x", "eta_u", "eta_w"):
            if getattr(g, name) <= 0:
                raise ConfigError(f"grid.{name} must be positive")
        if g.rho_x not in (0.0, g.eta_x) or g.rho_w not in (0.0, g.eta_w):
            raise ConfigError("rho_x / rho_w must equal the subsystem spacings (or be 0)")
        if g.eta_z < 0:
            raise ConfigError("grid.eta_z must be nonnegative")
        if s.n_c < 1 or s.n_i < 1 or s.n_fit < 1 or s.n_fit > s.n_i:
            raise ConfigError("sampling counts must satisfy 1 <= n_fit <= n_i and n_c >= 1")
        if not 1 <= self.decomposition.sigma <= 4:
            raise ConfigError("decomposition.sigma must lie in [1, 4]")
        if self.decomposition.mode not in ("tree", "chain"):
            raise ConfigError("decomposition.mode must be tree or chain")
        if not self.lasso.alpha_grid or min(self.lasso.alpha_grid) < 0:
            raise ConfigError("lasso.alpha_grid needs nonnegative values")
        if self.lasso.folds < 2:
            raise ConfigError("lasso.folds must be at least 2")
        lp = self.lipschitz
        if lp.delta <= 0 or lp.batches < 2 or lp.pairs < 1:
            raise ConfigError("lipschitz sampling parameters must be positive")
        sy = self.synthesis
        if sy.radius <= 0 or sy.horizon < 1 or sy.rollouts < 0 or sy.center_max < sy.center_min:
            raise ConfigError("invalid synthesis parameters")
        if sy.x0 and len(sy.x0) != self.network.n:
            raise ConfigError("synthesis.x0 needs one value per subsystem")
        if self.backend not in ("auto", "explicit", "bdd", "factored"):
            raise ConfigError(f"unknown backend {self.backend}")
        if self.theta_max <= 0:
            raise ConfigError("theta_max must be positive")
        return self

    # (de)serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "").validate()

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **sections) -> "RunConfig":
        d = self.to_dict()
        for k, v in sections.items():
            if isinstance(v, dict):
                d[k].update(v)
            else:
                d[k] = v
        return RunConfig.from_dict(d)


def _build(cls, d: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{where or 'top level'}]")
    kw = {}
    defaults = cls()
    for name, value in d.items():
        cur = getattr(defaults, name)
        if is_dataclass(cur):
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] must be a table")
            kw[name] = _build(type(cur), value, name)
        else:
            kw[name] = _coerce(value, cur, f"{where}.{name}" if where else name)
    return cls(**kw)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def benchmark_defaults(benchmark: int, n: int | None = None) -> RunConfig:
    """Settings of the two case studies (state spacing 1 for both)."""
    if benchmark == 1:
        cfg = RunConfig(
            network=NetworkConfig(benchmark=1, n=4 if n is None else n),
            grid=GridConfig(eta_z=1.0),
            sampling=SamplingConfig(n_c=150, n_i=10_000, n_fit=200),
            decomposition=DecompositionConfig(sigma=2, mode="chain"),
            lipschitz=LipschitzConfig(L_x=1.0, L_w=1.0, L_M=1.0),
            synthesis=SynthesisConfig(enabled=False),
        )
    elif benchmark == 2:
        cfg = RunConfig(network=NetworkConfig(benchmark=2, n=4 if n is None else n))
    else:
        raise ConfigError(f"unknown benchmark {benchmark}")
    return cfg.validate()


def load_config(path) -> RunConfig:
    """Read a TOML or JSON file; missing keys keep the benchmark defaults."""
    p = Path(path)
    text = p.read_bytes()
    try:
        if p.suffix.lower() == ".json":
            d = json.loads(text.decode())
        else:
            d = tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    net = d.get("network", {})
    if not isinstance(net, dict):
        raise ConfigError("[network] must be a table")
    bench, n = net.get("benchmark", 2), net.get("n")
    for key, v in (("benchmark", bench), ("n", n)):
        if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(f"network.{key} must be an integer")
    base = benchmark_defaults(bench, n)
    merged = base.to_dict()
    for k, v in d.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k].update(v)
        else:
            merged[k] = v
    return RunConfig.from_dict(merged)


def save_config(cfg: RunConfig, path) -> None:
    p = Path(path)
    p.write_text(cfg.to_json() if p.suffix.lower() == ".json" else cfg.to_toml())


__all__ = [
    "ConfigError",
    "RunConfig",
    "benchmark_defaults",
    "load_config",
    "save_config",
]
