"""Experiment configuration: INI text with [experiment], [field] and [run] sections.

Example::

    [experiment]
    name = ensemble

    [field]
    case = pareto
    d = 1
    alpha = 4

    [run]
    t = 1e4
    samples = 2000
    master_seed = 7
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, field

from .field import GOLDEN, MASK64, MAX_DIM, mix64

EXPERIMENTS = ("ensemble", "trace", "sandwich", "gof", "envelopes", "constants")
CASES = ("pareto", "weibull", "exponential")
CENTERINGS = ("compact", "expanded")

_KEYS = {
    "experiment": {"name"},
    "field": {"case", "d", "alpha", "gamma"},
    "run": {
        "t", "t_grid", "samples", "master_seed", "epsilon", "centering", "threads", "out_dir",
        "box_radius", "floor", "bands", "r_lo", "r_hi", "t_min", "p_min", "ks_max",
    },
}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass
class ExperimentConfig:
    experiment: str
    case: str
    d: int = 1
    alpha: float | None = None
    gamma: float | None = None
    t_grid: list[float] = field(default_factory=list)
    samples: int = 1
    master_seed: int = 0
    epsilon: float = 1e-6
    centering: str = "compact"
    threads: int | None = None  # None means one worker per CPU
    out_dir: str = "pamlab_out"
    box_radius: int | None = None
    floor: float | None = None
    bands: int = 10
    r_lo: int | None = None
    r_hi: int | None = None
    t_min: float | None = None
    p_min: float = 0.01
    ks_max: float | None = None

    @property
    def shape(self) -> float | None:
        return self.alpha if self.case == "pareto" else self.gamma

    def to_json(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        """Everything that determines per-sample results (not threads or out_dir)."""
        d = self.to_json()
        d.pop("threads")
        d.pop("out_dir")
        return json.dumps(d, sort_keys=True)


def derive_sample_seed(master_seed: int, sample_index: int) -> int:
    """Seed of sample ``i``: splitmix64 finalizer of master + (i + 1) * golden ratio.

    The argument is injective in ``i`` modulo 2^64 (the increment is odd) and
    the finalizer is a bijection, so seeds never collide within a run.
    """
    if sample_index < 0:
        raise ValueError("sample_index must be >= 0")
    return mix64((int(master_seed) + (int(sample_index) + 1) * GOLDEN) & MASK64)


def _num(raw: str, kind, key: str, errs: list[str]):
    try:
        if kind is int:
            v = float(raw)
            if not v.is_integer():
                raise ValueError
            return int(v) if abs(v) < 2**53 else int(raw)
        v = float(raw)
        if math.isnan(v):
            raise ValueError
        return v
    except ValueError:
        errs.append(f"{key}: expected {'an integer' if kind is int else 'a number'}, got {raw!r}")
        return None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation found."""
    cp = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError([f"duplicate key {e.option!r} in [{e.section}] at line {e.lineno}"]) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError([f"duplicate section [{e.section}] at line {e.lineno}"]) from None
    except configparser.Error as e:
        raise ConfigError([f"malformed configuration: {e}"]) from None
    errs: list[str] = []
    for sec in cp.sections():
        if sec not in _KEYS:
            errs.append(f"unknown section [{sec}]")
            continue
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                errs.append(f"unknown key {key!r} in [{sec}]")
    get = lambda sec, key: cp.get(sec, key, fallback=None) if cp.has_section(sec) else None  # noqa: E731

    name = get("experiment", "name")
    if name is None:
        errs.append("experiment.name is required")
    elif name not in EXPERIMENTS:
        errs.append(f"experiment.name must be one of {', '.join(EXPERIMENTS)} (got {name!r})")
    case = get("field", "case")
    if case is None:
        errs.append("field.case is required")
    elif case not in CASES:
        errs.append(f"field.case must be one of {', '.join(CASES)} (got {case!r})")
    cfg = ExperimentConfig(experiment=name or "", case=case or "")

    ints = {"d": "field", "samples": "run", "master_seed": "run", "box_radius": "run", "bands": "run",
            "r_lo": "run", "r_hi": "run"}
    floats = {"alpha": "field", "gamma": "field", "epsilon": "run", "floor": "run", "t_min": "run",
              "p_min": "run", "ks_max": "run"}
    for key, sec in ints.items():
        raw = get(sec, key)
        if raw is not None:
            v = _num(raw, int, key, errs)
            if v is not None:
                setattr(cfg, key, v)
    for key, sec in floats.items():
        raw = get(sec, key)
        if raw is not None:
            v = _num(raw, float, key, errs)
            if v is not None:
                setattr(cfg, key, v)
    for key in ("centering", "out_dir"):
        raw = get("run", key)
        if raw is not None:
            setattr(cfg, key, raw)
    raw = get("run", "threads")
    if raw is not None and raw != "auto":
        cfg.threads = _num(raw, int, "threads", errs)

    t_raw, grid_raw = get("run", "t"), get("run", "t_grid")
    if t_raw is not None and grid_raw is not None:
        errs.append("give either t or t_grid, not both")
    elif t_raw is not None:
        v = _num(t_raw, float, "t", errs)
        cfg.t_grid = [v] if v is not None else []
    elif grid_raw is not None:
        vals = [_num(x.strip(), float, "t_grid", errs) for x in grid_raw.split(",") if x.strip()]
        cfg.t_grid = [v for v in vals if v is not None]

    _validate(cfg, errs)
    if errs:
        raise ConfigError(errs)
    return cfg


def _validate(c: ExperimentConfig, errs: list[str]) -> None:
    if not 1 <= c.d <= MAX_DIM:
        errs.append(f"d must lie in [1, {MAX_DIM}] (got {c.d})")
    if c.case == "pareto":
        if c.alpha is None:
            errs.append("pareto case needs alpha")
        elif not c.alpha > c.d:
            errs.append(f"alpha must exceed d (alpha > d required; got alpha={c.alpha}, d={c.d})")
    if c.case == "weibull":
        if c.gamma is None:
            errs.append("weibull case needs gamma")
        elif not 0 < c.gamma <= 1:
            errs.append(f"gamma must lie in (0, 1] (got {c.gamma})")
    if c.samples < 1:
        errs.append(f"samples must be >= 1 (got {c.samples})")
    if not 0 <= c.master_seed <= MASK64:
        errs.append("master_seed must lie in [0, 2^64 - 1]")
    if not 0 < c.epsilon < 1:
        errs.append(f"epsilon must lie in (0, 1) (got {c.epsilon})")
    if c.centering not in CENTERINGS:
        errs.append(f"centering must be one of {', '.join(CENTERINGS)} (got {c.centering!r})")
    if c.threads is not None and c.threads < 1:
        errs.append(f"threads must be >= 1 or auto (got {c.threads})")
    if any(not t > 0 for t in c.t_grid):
        errs.append("all t values must be positive")
    if c.experiment in ("ensemble", "trace", "sandwich", "gof") and not c.t_grid:
        errs.append(f"{c.experiment} needs t or t_grid")
    if c.experiment in ("ensemble", "trace", "gof") and c.case == "exponential":
        errs.append(f"{c.experiment} needs a pareto or weibull field")
    if c.box_radius is not None and c.box_radius < 1:
        errs.append("box_radius must be >= 1")
    if c.bands < 5:
        errs.append("bands must be >= 5")
    if c.experiment == "envelopes":
        if c.r_lo is None or c.r_hi is None:
            errs.append("envelopes needs r_lo and r_hi")
        elif not 16 <= c.r_lo < c.r_hi:
            errs.append("need 16 <= r_lo < r_hi")
    if not 0 < c.p_min < 1:
        errs.append("p_min must lie in (0, 1)")
