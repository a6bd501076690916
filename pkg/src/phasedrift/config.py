"""Run configuration read from INI-style files with sections corr, field, sim, stopping, output.

Example::

    [corr]
    family = GaussianIsotropic
    sigma_v = 1
    rho_cross = 0

    [sim]
    delta = 0.02
    k0 = 0, 0, 4
    t_end = 0.5
    n_paths = 5000
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .correlation import CorrelationModel
from .delta_dynamics import DT_FACTOR, EnsembleParams, StoppingConfig
from .fields import DEFAULT_N_MODES

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


def _floats(text, n=None, name="value"):
    try:
        vals = tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} as numbers") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _bool(text, name):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {text!r}")


def _opt_float(text, name):
    t = str(text).strip().lower()
    if t in ("", "none", "off"):
        return None
    try:
        return float(t)
    except ValueError as exc:
        raise ConfigError(f"{name}: expected a number or 'none', got {text!r}") from exc


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class RunConfig:
    model: CorrelationModel = field(default_factory=CorrelationModel)
    n_modes: int = DEFAULT_N_MODES
    field_seed: int = 0
    clip_sigmas: float | None = None
    delta: float | None = None
    delta_sweep: tuple | None = None
    x0: tuple = (0.0, 0.0, 0.0)
    k0: tuple = (0.0, 0.0, 1.0)
    t_end: float = 1.0
    dt_factor: float = DT_FACTOR
    n_paths: int = 1000
    base_seed: int | None = None
    quenched: bool = False
    checkpoints: tuple | None = None
    k_list: tuple | None = None
    limit_n_paths: int | None = None
    limit_dt: float | None = None
    sphere_grid: int = 128
    sphere_dt: float | None = None
    sphere_q0: str = "cos"
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    out_dir: str = "out"
    out_format: str = "csv"

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigError("field.n_modes must be >= 1")
        if self.n_paths < 2:
            raise ConfigError("sim.n_paths must be >= 2")
        if self.delta is not None and not 0.0 < self.delta <= 1.0:
            raise ConfigError("sim.delta must lie in (0, 1]")
        if self.delta_sweep is not None:
            d = self.delta_sweep
            if len(d) < 1 or any(not 0.0 < v <= 1.0 for v in d):
                raise ConfigError("sim.delta_sweep values must lie in (0, 1]")
            if any(b >= a for a, b in zip(d, d[1:])):
                raise ConfigError("sim.delta_sweep must be strictly decreasing")
        if not self.t_end > 0.0:
            raise ConfigError("sim.t_end must be positive")
        if not self.dt_factor > 0.0:
            raise ConfigError("sim.dt_factor must be positive")
        if not math.hypot(*self.k0) > 0.0:
            raise ConfigError("sim.k0 must be nonzero")
        if self.out_format not in ("csv", "json"):
            raise ConfigError("output.format must be csv or json")
        if self.sphere_q0 not in ("one", "cos"):
            raise ConfigError("sphere.q0 must be 'one' or 'cos'")
        bad = self.model.fatal_violations()
        if bad:
            raise ConfigError("invalid correlation model: " + "; ".join(v.message for v in bad))

    @property
    def seed(self) -> int:
        return self.field_seed if self.base_seed is None else self.base_seed

    def deltas(self):
        if self.delta_sweep is not None:
            return self.delta_sweep
        if self.delta is not None:
            return (self.delta,)
        raise ConfigError("set sim.delta or sim.delta_sweep")

    def ensemble_params(self, delta=None) -> EnsembleParams:
        if delta is None:
            if self.delta is None:
                raise ConfigError("sim.delta is required")
            delta = self.delta
        return EnsembleParams(delta=float(delta), k0=self.k0, t_end=self.t_end, n_paths=self.n_paths,
                              x0=self.x0, dt_factor=self.dt_factor, base_seed=self.seed,
                              n_modes=self.n_modes, clip_sigmas=self.clip_sigmas, quenched=self.quenched,
                              checkpoints=self.checkpoints, stopping=self.stopping)

    def replace(self, **changes):
        try:
            return dataclasses.replace(self, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def sections(self):
        m = self.model
        return {
            "corr": {"family": m.family, "sigma_v": m.sigma_v, "sigma_s": m.sigma_s, "ell": m.ell,
                     "rho_cross": m.rho_cross, "cross_shift": m.cross_shift},
            "field": {"n_modes": self.n_modes, "seed": self.field_seed, "clip_sigmas": self.clip_sigmas},
            "sim": {"delta": self.delta, "delta_sweep": self.delta_sweep, "x0": self.x0, "k0": self.k0,
                    "t_end": self.t_end, "dt_factor": self.dt_factor, "n_paths": self.n_paths,
                    "base_seed": self.base_seed, "quenched_flag": self.quenched,
                    "checkpoints": self.checkpoints, "k_list": self.k_list},
            "limit": {"n_paths": self.limit_n_paths, "dt": self.limit_dt},
            "sphere": {"grid": self.sphere_grid, "dt": self.sphere_dt, "q0": self.sphere_q0},
            "stopping": {"eps1": self.stopping.eps1, "eps2": self.stopping.eps2,
                         "eps3": self.stopping.eps3, "eps4": self.stopping.eps4},
            "output": {"dir": self.out_dir, "format": self.out_format},
        }

    def to_ini(self) -> str:
        """Canonical text form; loading it gives back an equal configuration."""
        lines = []
        for sec, items in self.sections().items():
            lines.append(f"[{sec}]")
            for key, val in items.items():
                lines.append(f"{key} = {_fmt(val)}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """SHA-256 of the canonical text without the output section."""
        text = self.to_ini().split("\n[output]")[0]
        return hashlib.sha256(text.encode()).hexdigest()


_KNOWN = {
    "corr": {"family", "sigma_v", "sigma_s", "ell", "rho_cross", "cross_shift"},
    "field": {"n_modes", "seed", "clip_sigmas"},
    "sim": {"delta", "delta_sweep", "x0", "k0", "t_end", "dt_factor", "n_paths", "base_seed",
            "quenched_flag", "clip_sigmas", "checkpoints", "k_list"},
    "limit": {"n_paths", "dt"},
    "sphere": {"grid", "dt", "q0"},
    "stopping": {"eps1", "eps2", "eps3", "eps4"},
    "output": {"dir", "format"},
}


def _from_parser(cp: configparser.ConfigParser) -> RunConfig:
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - _KNOWN[sec]
        if extra:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(extra))}")

    def get(sec, key, conv, default):
        if cp.has_option(sec, key):
            raw = cp.get(sec, key)
            if str(raw).strip().lower() in ("none", ""):
                return None
            try:
                return conv(raw)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{sec}.{key}: cannot parse {raw!r}") from exc
        return default

    d = RunConfig()
    m = d.model
    try:
        model = CorrelationModel(
            sigma_v=get("corr", "sigma_v", float, m.sigma_v),
            sigma_s=get("corr", "sigma_s", float, m.sigma_s),
            ell=get("corr", "ell", float, m.ell),
            rho_cross=get("corr", "rho_cross", float, m.rho_cross),
            family=get("corr", "family", str.strip, m.family),
            cross_shift=get("corr", "cross_shift", lambda t: _floats(t, 3, "corr.cross_shift"), m.cross_shift),
        )
    except ValueError as exc:
        raise ConfigError(f"corr: {exc}") from exc

    clip_f = _opt_float(cp.get("field", "clip_sigmas", fallback="none"), "field.clip_sigmas")
    clip_s = _opt_float(cp.get("sim", "clip_sigmas", fallback="none"), "sim.clip_sigmas")
    if clip_f is not None and clip_s is not None and clip_f != clip_s:
        raise ConfigError("field.clip_sigmas and sim.clip_sigmas disagree")
    clip = clip_f if clip_f is not None else clip_s
    if clip is not None and not clip > 0:
        raise ConfigError("clip_sigmas must be positive")

    eps = StoppingConfig()
    try:
        stopping = StoppingConfig(*(get("stopping", f"eps{i}", float, getattr(eps, f"eps{i}"))
                                    for i in range(1, 5)))
    except ValueError as exc:
        raise ConfigError(f"stopping: {exc}") from exc

    k_list = get("sim", "k_list", lambda t: _floats(t, None, "sim.k_list"), None)
    if k_list is not None:
        if len(k_list) % 3:
            raise ConfigError("sim.k_list must hold a multiple of 3 numbers")
        k_list = tuple(tuple(k_list[i:i + 3]) for i in range(0, len(k_list), 3))

    return RunConfig(
        model=model,
        n_modes=get("field", "n_modes", int, d.n_modes),
        field_seed=get("field", "seed", int, d.field_seed),
        clip_sigmas=clip,
        delta=get("sim", "delta", float, None),
        delta_sweep=get("sim", "delta_sweep", lambda t: _floats(t, None, "sim.delta_sweep"), None),
        x0=get("sim", "x0", lambda t: _floats(t, 3, "sim.x0"), d.x0),
        k0=get("sim", "k0", lambda t: _floats(t, 3, "sim.k0"), d.k0),
        t_end=get("sim", "t_end", float, d.t_end),
        dt_factor=get("sim", "dt_factor", float, d.dt_factor),
        n_paths=get("sim", "n_paths", int, d.n_paths),
        base_seed=get("sim", "base_seed", int, None),
        quenched=get("sim", "quenched_flag", lambda t: _bool(t, "sim.quenched_flag"), False),
        checkpoints=get("sim", "checkpoints", lambda t: _floats(t, None, "sim.checkpoints"), None),
        k_list=k_list,
        limit_n_paths=get("limit", "n_paths", int, None),
        limit_dt=get("limit", "dt", float, None),
        sphere_grid=get("sphere", "grid", int, d.sphere_grid),
        sphere_dt=get("sphere", "dt", float, None),
        sphere_q0=get("sphere", "q0", str.strip, d.sphere_q0),
        stopping=stopping,
        out_dir=get("output", "dir", str.strip, d.out_dir),
        out_format=get("output", "format", str.strip, d.out_format),
    )


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return _from_parser(cp)


def load_config(path) -> RunConfig:
    """Read a config file, or the configuration recorded in a run manifest (``*.json``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            text = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path} is not a run manifest") from exc
    return parse_config(text)

