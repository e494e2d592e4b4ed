"""Declarative run configuration: strict JSON in, dataclasses out.

All paper defaults are prefilled, so a minimal config names only what it
changes (grid size, band, strategy, seed).  Unknown keys are rejected;
parse(emit(config)) round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .design import FilterSpec, GridSpec
from .materials import MaterialCatalog

__all__ = ["ConfigError", "RunConfig", "CampaignConfig", "parse_config",
           "emit_config", "load_config", "make_grid", "make_catalog",
           "make_filter"]


class ConfigError(ValueError):
    """Schema violation in a run configuration."""


@dataclass
class GridConfig:
    nx: int = 100
    ny: int = 100
    element_size: float = 0.5e-3
    fixed_rows: int = 10


@dataclass
class MaterialConfig:
    E: list = field(default_factory=lambda: [4.85e9, 0.05 * 4.85e9])
    rho_s: float = 1188.35
    nu: float = 0.31
    rho_a: float = 1.225
    c_a: list = field(default_factory=lambda: [340.0, 340.0 * 2e-4])
    q: float = 8.0


@dataclass
class FilterConfig:
    r1: float = 14.0
    r2: float = 7.0
    eta_b: float = 0.5
    delta_eta: float = 0.1
    eta_erode2: float = 0.6
    eta_dilate2: float = 0.4


@dataclass
class BandConfig:
    f_minus: float = 2000.0
    f_plus: float = 2500.0
    n_samples: int = 5


@dataclass
class MMAConfigSection:
    s_init: float = 0.2
    s_decr: float = 0.65
    s_incr: float = 1.06
    mu: float = 0.1
    c_i: float = 1000.0
    d_i: float = 1.0


@dataclass
class ConvergenceConfig:
    constraint_tol: float = 0.01
    stl_tol_db: float = 0.01
    window: int = 5


@dataclass
class CampaignConfig:
    bands: list = field(default_factory=lambda: [[2000.0, 2500.0]])
    strategies: list = field(default_factory=lambda: ["baseline"])
    n_runs: int = 5
    seed_base: int = 0


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    band: BandConfig = field(default_factory=BandConfig)
    mma: MMAConfigSection = field(default_factory=MMAConfigSection)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    strategy: str = "baseline"
    v_frac: float = 0.5
    mu_sw: float = 15.0
    theta: float = 0.0
    seed: int = 0
    max_iterations: int = 5000


_SECTION_TYPES = {
    "grid": GridConfig,
    "material": MaterialConfig,
    "filters": FilterConfig,
    "band": BandConfig,
    "mma": MMAConfigSection,
    "convergence": ConvergenceConfig,
    "campaign": CampaignConfig,
}


def _fill(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {path or 'root'} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section {path or 'root'}; "
            f"allowed: {sorted(known)}")
    obj = cls()
    for name, value in data.items():
        sub = _SECTION_TYPES.get(name) if cls is RunConfig else None
        if sub is not None:
            setattr(obj, name, _fill(sub, value, f"{path}{name}."))
        else:
            default = getattr(obj, name)
            if isinstance(default, bool) or value is None:
                raise ConfigError(f"bad value for {path}{name}")
            setattr(obj, name, type(default)(value) if not isinstance(default, list)
                    else list(value))
    return obj


def parse_config(data: dict) -> RunConfig:
    cfg = _fill(RunConfig, data, "")
    if cfg.strategy.lower() not in ("baseline", "e1", "e2", "e3", "f1", "f2",
                                    "f3", "f4", "r1", "r2", "r3"):
        raise ConfigError(f"unknown strategy {cfg.strategy!r}")
    return cfg


def emit_config(cfg: RunConfig) -> dict:
    return asdict(cfg)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)


def make_grid(cfg: RunConfig) -> GridSpec:
    g = cfg.grid
    return GridSpec(nx=g.nx, ny=g.ny, element_size=g.element_size,
                    fixed_rows=g.fixed_rows)


def make_catalog(cfg: RunConfig) -> MaterialCatalog:
    m = cfg.material
    return MaterialCatalog(E=complex(m.E[0], m.E[1]), rho_s=m.rho_s, nu=m.nu,
                           rho_a=m.rho_a, c_a=complex(m.c_a[0], m.c_a[1]),
                           q=m.q)


def make_filter(cfg: RunConfig) -> FilterSpec:
    f = cfg.filters
    return FilterSpec(r1=f.r1, r2=f.r2, beta1=1.0, beta2=0.5, eta_b=f.eta_b,
                      delta_eta=f.delta_eta, eta_erode2=f.eta_erode2,
                      eta_dilate2=f.eta_dilate2)
