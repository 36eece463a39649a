"""Run configuration: INI file -> RunConfig, with environment overrides."""

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from .dynamics import OUParams
from .efficiency import EfficiencySpec, Family
from .grid import GridSpec
from .utils import ConfigError

ENV_PREFIX = "POWERGAME_"


@dataclass(frozen=True)
class GameParams:
    """Scenario constants shared by every solver (SI units)."""

    n_players: int = 1
    rate: float = 1.0
    sigma2: float = 1.0
    mu: Tuple[float, float] = (1.0, 0.0)
    eta: float = 0.5
    p_max: float = 2.0
    t_start: float = 0.0
    t_end: float = 1.0
    q_weight: float = 0.0
    e0: float = 1.5
    gains: Tuple[float, ...] = ()
    efficiency: EfficiencySpec = field(default_factory=EfficiencySpec)

    def validate(self) -> "GameParams":
        checks = [
            ("n_players", self.n_players >= 1, "must be >= 1"),
            ("rate", self.rate >= 0, "must be >= 0"),
            ("sigma2", self.sigma2 > 0, "must be positive"),
            ("eta", self.eta >= 0, "must be >= 0"),
            ("p_max", self.p_max > 0, "must be positive"),
            ("t_end", self.t_end > self.t_start, "must exceed game.t_start"),
            ("q_weight", self.q_weight >= 0, "must be >= 0"),
            ("e0", self.e0 >= 0, "must be >= 0"),
            ("gains", all(g > 0 for g in self.gains), "entries must be positive"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"game.{key}: {msg}, got {getattr(self, key)!r}")
        if self.gains and len(self.gains) != self.n_players:
            raise ConfigError(
                f"game.gains: {len(self.gains)} entries for n_players={self.n_players}"
            )
        return self

    @property
    def ou(self) -> OUParams:
        return OUParams(mu=self.mu, eta=self.eta)

    @property
    def horizon(self) -> float:
        return self.t_end - self.t_start

    @property
    def mean_channel_power(self) -> float:
        return self.ou.mean_channel_power

    def terminal_utility(self, E: np.ndarray) -> np.ndarray:
        """q(X) = q_weight * E."""
        return self.q_weight * np.asarray(E, dtype=float)


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    tol: float = 1e-3
    max_iter: int = 50
    switching: str = "cell"


@dataclass(frozen=True)
class SimulationOptions:
    dt: float = 0.01
    seed: int = 0
    replications: int = 100
    k_list: Tuple[int, ...] = (16, 64, 256)
    n_paths: int = 10_000
    record_paths: int = 10
    sample_times: Tuple[float, ...] = (0.5, 1.0)
    init: str = "stationary"
    policy: str = "constant"
    power: float = 0.5


@dataclass(frozen=True)
class OffProbabilityOptions:
    ve_max: float = 2.0
    n_points: int = 20
    n_samples: int = 100_000


@dataclass(frozen=True)
class OutputOptions:
    dir: str = "results"
    snapshot_every: int = 10


@dataclass(frozen=True)
class RunConfig:
    name: str = "benchmark"
    game: GameParams = field(default_factory=GameParams)
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverOptions = field(default_factory=SolverOptions)
    simulation: SimulationOptions = field(default_factory=SimulationOptions)
    off_probability: OffProbabilityOptions = field(
        default_factory=OffProbabilityOptions
    )
    output: OutputOptions = field(default_factory=OutputOptions)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _choice(*allowed: str) -> Callable[[str], str]:
    def conv(text: str) -> str:
        value = text.strip().lower()
        if value not in allowed:
            raise ValueError(f"expected one of {list(allowed)}")
        return value

    return conv


# section -> key -> converter
SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "scenario": {"name": str},
    "game": {
        "n_players": int,
        "rate": float,
        "sigma2": float,
        "mu_x": float,
        "mu_y": float,
        "eta": float,
        "p_max": float,
        "t_start": float,
        "t_end": float,
        "q_weight": float,
        "e0": float,
        "gains": _floats,
    },
    "efficiency": {
        "family": _choice(*(f.value for f in Family)),
        "a": float,
        "m": int,
    },
    "grid": {
        "e_max": float,
        "n_e": int,
        "n_x": int,
        "n_y": int,
        "n_t": int,
        "width": float,
        "min_halfwidth": float,
    },
    "solver": {
        "damping": float,
        "tol": float,
        "max_iter": int,
        "switching": _choice("node", "cell"),
    },
    "simulation": {
        "dt": float,
        "seed": int,
        "replications": int,
        "k_list": _ints,
        "n_paths": int,
        "record_paths": int,
        "sample_times": _floats,
        "init": _choice("common", "stationary"),
        "policy": _choice("constant", "mfg"),
        "power": float,
    },
    "off_probability": {"ve_max": float, "n_points": int, "n_samples": int},
    "output": {"dir": str, "snapshot_every": int},
}


def _env_overrides(env: Mapping[str, str]) -> Dict[Tuple[str, str], str]:
    """POWERGAME_<SECTION>_<KEY> -> {(section, key): text}."""
    out = {}
    # longest section names first so off_probability is not split early
    sections = sorted(SCHEMA, key=len, reverse=True)
    for name, text in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for sec in sections:
            if rest.startswith(sec + "_"):
                key = rest[len(sec) + 1:]
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{sec}.{key}: unknown key (from {name})")
                out[(sec, key)] = text
                break
        else:
            raise ConfigError(f"{name}: no configuration section matches")
    return out


def _convert(section: str, key: str, text: str) -> Any:
    try:
        return SCHEMA[section][key](text.strip())
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}.{key}: invalid value {text!r} ({e})")


def parse_config(text: str, env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Parse INI text; ``env`` entries override file values."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config: cannot parse INI text ({e})")

    raw: Dict[Tuple[str, str], str] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{sec}: unknown section")
        for key, value in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")
            raw[(sec, key)] = value
    raw.update(_env_overrides(env or {}))
    vals = {k: _convert(k[0], k[1], v) for k, v in raw.items()}

    def section(sec: str) -> Dict[str, Any]:
        return {k: v for (s, k), v in vals.items() if s == sec}

    base = RunConfig()
    eff = replace(base.game.efficiency, **section("efficiency"))
    game_kw = section("game")
    mu = (
        game_kw.pop("mu_x", base.game.mu[0]),
        game_kw.pop("mu_y", base.game.mu[1]),
    )
    game = replace(base.game, mu=mu, efficiency=eff, **game_kw).validate()
    grid = replace(base.grid, **section("grid")).validate()
    solver = replace(base.solver, **section("solver"))
    sim = replace(base.simulation, **section("simulation"))
    off = replace(base.off_probability, **section("off_probability"))
    out = replace(base.output, **section("output"))
    cfg = RunConfig(
        name=section("scenario").get("name", base.name),
        game=game,
        grid=grid,
        solver=solver,
        simulation=sim,
        off_probability=off,
        output=out,
    )
    validate_options(cfg)
    return cfg


def validate_options(cfg: RunConfig) -> None:
    s = cfg.solver
    if not 0 < s.damping <= 1:
        raise ConfigError(f"solver.damping: must lie in (0, 1], got {s.damping}")
    if s.tol <= 0:
        raise ConfigError(f"solver.tol: must be positive, got {s.tol}")
    if s.max_iter < 1:
        raise ConfigError(f"solver.max_iter: must be >= 1, got {s.max_iter}")
    sim = cfg.simulation
    if sim.dt <= 0:
        raise ConfigError(f"simulation.dt: must be positive, got {sim.dt}")
    if sim.seed < 0:
        raise ConfigError(f"simulation.seed: must be >= 0, got {sim.seed}")
    if sim.replications < 1:
        raise ConfigError(f"simulation.replications: must be >= 1")
    if not sim.k_list or min(sim.k_list) < 1:
        raise ConfigError(f"simulation.k_list: need positive player counts")
    if sim.n_paths < 1 or sim.record_paths < 0:
        raise ConfigError("simulation.n_paths: must be >= 1")
    if sim.power < 0 or sim.power > cfg.game.p_max:
        raise ConfigError(
            f"simulation.power: must lie in [0, game.p_max], got {sim.power}"
        )
    if any(not cfg.game.t_start <= t <= cfg.game.t_end for t in sim.sample_times):
        raise ConfigError("simulation.sample_times: must lie in [t_start, t_end]")
    off = cfg.off_probability
    if off.ve_max < 0 or off.n_points < 2:
        raise ConfigError("off_probability.n_points: need ve_max >= 0, n_points >= 2")
    if off.n_samples < 10_000:
        raise ConfigError(
            f"off_probability.n_samples: must be >= 10000, got {off.n_samples}"
        )
    if cfg.output.snapshot_every < 1:
        raise ConfigError("output.snapshot_every: must be >= 1")


def load_config(
    path: Optional[Path] = None, env: Optional[Mapping[str, str]] = None
) -> RunConfig:
    """Read ``path`` (or use defaults) and apply overrides from ``env``."""
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, os.environ if env is None else env)


def _fmt(value: Any) -> str:
    if isinstance(value, Family):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    g = cfg.game
    eff = g.efficiency
    sections: Dict[str, Dict[str, Any]] = {
        "scenario": {"name": cfg.name},
        "game": {
            "n_players": g.n_players,
            "rate": g.rate,
            "sigma2": g.sigma2,
            "mu_x": g.mu[0],
            "mu_y": g.mu[1],
            "eta": g.eta,
            "p_max": g.p_max,
            "t_start": g.t_start,
            "t_end": g.t_end,
            "q_weight": g.q_weight,
            "e0": g.e0,
            "gains": g.gains,
        },
        "efficiency": {"family": eff.family, "a": eff.a, "m": eff.m},
    }
    for name, obj in [
        ("grid", cfg.grid),
        ("solver", cfg.solver),
        ("simulation", cfg.simulation),
        ("off_probability", cfg.off_probability),
        ("output", cfg.output),
    ]:
        sections[name] = {f.name: getattr(obj, f.name) for f in fields(obj)}
    lines = []
    for sec, items in sections.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)
