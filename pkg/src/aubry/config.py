"""Run configuration: a flat, sectioned key-value file (INI syntax)
with a closed schema.  Unknown sections or keys are hard errors with
file/line positions; silent typos in tolerance names must not be able
to invalidate an acceptance run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


_MODEL_PARAM_KEYS = {"k", "eps"}

_SCHEMA = {
    "model": {"name": str, "k": float, "eps": float},
    "map": {"shift_amplitude": float},
    "grid": {"n": int, "substeps": int, "refine": bool},
    "phase": {"nq": int, "np": int, "p_max": float, "flow_substeps": int,
              "budget_levels": int, "eps_schedule": str, "n_min": int,
              "window": int},
    "tolerances": {"tol_diag": float, "tol_gap": float, "tol_class": float,
                   "tol_energy": float, "tol_fix": float, "tol_cross": float,
                   "tol_diag_phase": float, "tol_slope": float,
                   "trend_slack": float},
    "iteration": {"barrier_n_min": int, "barrier_n_max": int,
                  "barrier_window": int, "slope_iters": int,
                  "phase_n_max": int},
    "run": {"out": str, "seed": int, "threads": int},
}


@dataclass
class RunConfig:
    # model
    model_name: str = "pendulum"
    model_params: dict = field(default_factory=dict)
    shift_amplitude: float = 0.3
    # configuration grid
    n: int = 256
    substeps: int = 16
    refine: bool = False
    # phase grid
    nq: int = 128
    np_: int = 128
    p_max: float = 3.0
    flow_substeps: int = 256
    budget_levels: int = 8
    eps_schedule: tuple = (4.0, 2.0, 1.0)   # multiples of the cell diameter
    phase_n_min: int = 0                    # 0 -> max(nq, np)
    phase_window: int = 16
    phase_n_max: int = 0                    # 0 -> derived
    # tolerances (0 -> grid-relative default where applicable)
    tol_diag: float = 0.0                   # 0 -> 20 / n^2
    tol_gap: float = 1.5
    tol_class: float = 0.1
    tol_energy: float = 1e-6
    tol_fix: float = 1e-6
    tol_cross: float = 0.05
    tol_diag_phase: float = 0.0             # 0 -> 2 * delta^2
    tol_slope: float = 1e-4
    trend_slack: float = 0.1
    # iteration budgets
    barrier_n_min: int = 0                  # 0 -> n
    barrier_n_max: int = 0                  # 0 -> 12 n
    barrier_window: int = 32
    slope_iters: int = 0                    # 0 -> 10 n
    # run
    out: str = "out"
    seed: int = 0
    threads: int = 1

    def resolved_tol_diag(self):
        return self.tol_diag if self.tol_diag > 0 else 20.0 / self.n ** 2

    def resolved_tol_diag_phase(self, delta):
        return self.tol_diag_phase if self.tol_diag_phase > 0 else 2.0 * delta ** 2

    def validate(self):
        if self.n < 8 or self.n > 1024:
            raise ConfigError(f"grid n={self.n} outside documented bounds [8, 1024]")
        if self.nq * self.np_ > 65536:
            raise ConfigError(f"phase grid {self.nq}x{self.np_} exceeds 65536 cells")
        if self.substeps < 4:
            raise ConfigError("substeps must be at least 4")
        for name in ("tol_gap", "tol_class", "tol_energy", "tol_fix",
                     "tol_cross", "tol_slope", "trend_slack"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tolerance {name} must be positive")
        for name in ("tol_diag", "tol_diag_phase"):
            if getattr(self, name) < 0:
                raise ConfigError(f"tolerance {name} must be positive (or omitted)")
        if any(e <= 0 for e in self.eps_schedule):
            raise ConfigError("eps_schedule entries must be positive")
        if list(self.eps_schedule) != sorted(self.eps_schedule, reverse=True):
            raise ConfigError("eps_schedule must be decreasing")
        if self.budget_levels < 2 or self.budget_levels > 64:
            raise ConfigError("budget_levels must be in [2, 64]")
        if self.p_max <= 0:
            raise ConfigError("p_max must be positive")
        return self


def _key_lines(path):
    """Map (section, key) -> line number for error messages."""
    lines = {}
    section = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", ";")):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                lines[(section, None)] = lineno
            elif "=" in line and section is not None:
                key = line.split("=", 1)[0].strip()
                lines[(section, key)] = lineno
    return lines


def _convert(raw, typ, where):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}")


def load_config(path) -> RunConfig:
    """Parse and validate a config file; every unknown section or key is
    an error naming its line."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}")
    where = _key_lines(path)
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            line = where.get((section, None), "?")
            raise ConfigError(f"{path}:{line}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                line = where.get((section, key), "?")
                raise ConfigError(
                    f"{path}:{line}: unknown key '{key}' in [{section}]")
            loc = f"{path}:{where.get((section, key), '?')}"
            typ = _SCHEMA[section][key]
            val = _convert(raw, typ, loc)
            _apply(cfg, section, key, val, loc)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}")


def _apply(cfg, section, key, val, loc):
    if section == "model":
        if key == "name":
            cfg.model_name = val
        else:
            cfg.model_params[key] = val
    elif section == "map":
        cfg.shift_amplitude = val
    elif section == "grid":
        setattr(cfg, key, val)
    elif section == "phase":
        if key == "np":
            cfg.np_ = val
        elif key == "eps_schedule":
            try:
                entries = tuple(float(x) for x in val.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"{loc}: eps_schedule must be comma-separated numbers")
            if not entries:
                raise ConfigError(f"{loc}: eps_schedule is empty")
            cfg.eps_schedule = entries
        elif key == "n_min":
            cfg.phase_n_min = val
        elif key == "window":
            cfg.phase_window = val
        else:
            setattr(cfg, key, val)
    elif section == "tolerances":
        setattr(cfg, key, val)
    elif section == "iteration":
        if key == "phase_n_max":
            cfg.phase_n_max = val
        else:
            setattr(cfg, key, val)
    elif section == "run":
        setattr(cfg, key, val)


def default_config_text():
    return """# aubry run configuration (all keys optional; shown with defaults)
[model]
name = pendulum
k = 1.0

[map]
shift_amplitude = 0.3

[grid]
n = 256
substeps = 16
refine = false

[phase]
nq = 128
np = 128
p_max = 3.0
flow_substeps = 256
budget_levels = 8
eps_schedule = 4,2,1
n_min = 0
window = 16

[tolerances]
tol_gap = 1.5
tol_class = 0.1
tol_energy = 1e-6
tol_fix = 1e-6
tol_cross = 0.05
tol_slope = 1e-4
trend_slack = 0.1

[iteration]
barrier_window = 32

[run]
out = out
seed = 0
threads = 1
"""
