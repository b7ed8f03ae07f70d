"""Experiment configuration: JSON files validated against a fixed schema.

Unknown keys are rejected at every level, before any computation starts."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .wave_step import StepConfig


@dataclass
class SeedSpec:
    kind: str = "ipm-demo"          # ipm-demo | expression | snapshot
    expr: str | None = None         # spatial profile over x1, x2 (kind = expression)
    path: str | None = None         # SFLD file (kind = snapshot)
    amplitude: float = 0.05
    mean: float = 0.3


@dataclass
class MicrolocalSpec:
    n: int = 1024
    lambdas: list = field(default_factory=lambda: [64, 128, 256])
    lin: list = field(default_factory=lambda: [1.0, 0.0])
    phase: str = "0.5*sin(x2)"
    amplitude: str = "1 + 0.5*cos(x2) + 0.3*sin(x1 + x2)"
    packets: int = 10
    quad_n: int = 256
    quad_lambda: int = 32
    quad_points: int = 16


@dataclass
class SmoothSpec:
    n: int = 256
    dt: float = 1e-3
    t_end: float = 1.0
    save_every: int = 10
    theta0: str = "cos(x1) + 0.5*sin(x1 + 2*x2) + 0.25*cos(3*x2)"
    nu_h: float = 0.0


@dataclass
class GlueSpec:
    T: float = 1.0
    n: int = 64
    dt: float = 1e-3
    theta0: str = "0.2 + cos(x1) + 0.5*sin(x1 + x2)"
    scan_points: int = 97


@dataclass
class ExperimentConfig:
    symbol: object = "ipm2d"        # builtin name or {"name": "custom", "m1": ..., "m2": ...}
    n: int = 512
    alpha: float = 0.05
    K1: float | None = None         # None: from the direction pair
    K: float | None = None          # amplitude constant, None: K0 of the pair
    Z: float = 4.0
    Y: float = 1.0
    C0: float = 1.0
    k_max: int = 2
    seed_field: SeedSpec = field(default_factory=SeedSpec)
    step: StepConfig = field(default_factory=StepConfig)
    microlocal: MicrolocalSpec = field(default_factory=MicrolocalSpec)
    smooth: SmoothSpec = field(default_factory=SmoothSpec)
    glue: GlueSpec = field(default_factory=GlueSpec)
    out: str = "out"
    rng_seed: int = 0

    def to_dict(self):
        return asdict(self)


_NESTED = {"seed_field": SeedSpec, "step": StepConfig, "microlocal": MicrolocalSpec,
           "smooth": SmoothSpec, "glue": GlueSpec}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    bad = sorted(set(data) - known)
    if bad:
        raise ConfigError(f"{where}: unknown keys {bad}")
    kw = {}
    for k, v in data.items():
        if cls is ExperimentConfig and k in _NESTED:
            v = _build(_NESTED[k], v, f"{where}.{k}")
        kw[k] = v
    return cls(**kw)


def _validate(cfg: ExperimentConfig):
    n = cfg.n
    if not (isinstance(n, int) and n >= 8 and n & (n - 1) == 0):
        raise ConfigError(f"n must be a power of two >= 8, got {n!r}")
    if not 0 < cfg.alpha < 1 / 9:
        raise ConfigError(f"alpha must lie in (0, 1/9), got {cfg.alpha}")
    if cfg.k_max < 0:
        raise ConfigError("k_max must be >= 0")
    if cfg.seed_field.kind not in ("ipm-demo", "expression", "snapshot"):
        raise ConfigError(f"seed_field.kind {cfg.seed_field.kind!r} not in ipm-demo | expression | snapshot")
    if cfg.seed_field.kind == "expression" and not cfg.seed_field.expr:
        raise ConfigError("seed_field.expr is required for kind 'expression'")
    if cfg.seed_field.kind == "snapshot" and not cfg.seed_field.path:
        raise ConfigError("seed_field.path is required for kind 'snapshot'")
    sym = cfg.symbol
    if isinstance(sym, dict):
        if set(sym) != {"name", "m1", "m2"} or sym["name"] != "custom":
            raise ConfigError('custom symbol must be {"name": "custom", "m1": ..., "m2": ...}')
    elif not isinstance(sym, str):
        raise ConfigError("symbol must be a name or a custom object")
    if len(cfg.microlocal.lambdas) < 3:
        raise ConfigError("microlocal.lambdas needs at least three values")


def load_config(source=None) -> ExperimentConfig:
    """From a path, a bundled config name (e.g. 'ipm-demo'), a dict, or None (defaults)."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    else:
        p = Path(source)
        if p.exists():
            text = p.read_text()
        else:
            name = str(source)
            name = name if name.endswith(".json") else name + ".json"
            try:
                text = resources.files("scalarforge").joinpath("configs", name).read_text()
            except (FileNotFoundError, OSError):
                raise ConfigError(f"config {source!r} not found") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {source}: {exc}") from None
    cfg = _build(ExperimentConfig, data, "config")
    _validate(cfg)
    return cfg


def make_symbol(cfg: ExperimentConfig):
    from .multipliers import builtin_symbol
    s = cfg.symbol
    if isinstance(s, dict):
        return builtin_symbol("custom", (s["m1"], s["m2"]))
    try:
        return builtin_symbol(s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
