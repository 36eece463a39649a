"""One-shot energy-efficient power control game on a multiple access channel."""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from .efficiency import EfficiencySpec, beta_star, eval_f
from .utils import DomainError, InfeasibleGameError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StaticProfile:
    """Power profile of K transmitters and the channel they share."""

    powers: np.ndarray
    channel_gains: np.ndarray
    sigma2: float
    rate: float = 1.0
    p_max: float = np.inf

    def __post_init__(self) -> None:
        p = np.asarray(self.powers, dtype=float)
        g = np.asarray(self.channel_gains, dtype=float)
        object.__setattr__(self, "powers", p)
        object.__setattr__(self, "channel_gains", g)
        if p.shape != g.shape or p.ndim != 1:
            raise DomainError(
                f"StaticProfile: powers {p.shape} and gains {g.shape} must be "
                "vectors of the same length"
            )
        if np.any(p < 0) or np.any(p > self.p_max):
            raise DomainError(f"StaticProfile: powers must lie in [0, {self.p_max}]")
        if np.any(g <= 0):
            raise DomainError("StaticProfile: channel gains must be positive")
        if self.sigma2 <= 0:
            raise DomainError(f"StaticProfile: sigma2 must be positive, got {self.sigma2}")

    @property
    def n_players(self) -> int:
        return len(self.powers)

    def with_power(self, i: int, power: float) -> "StaticProfile":
        powers = self.powers.copy()
        powers[i] = power
        return replace(self, powers=powers)


@dataclass(frozen=True)
class StaticEquilibrium:
    powers: np.ndarray
    beta_star: float
    cap_exceeded: bool


def _check_index(profile: StaticProfile, i: int) -> None:
    if not 0 <= i < profile.n_players:
        raise IndexError(f"player index {i} out of range for K={profile.n_players}")


def sinr(profile: StaticProfile, i: int) -> float:
    _check_index(profile, i)
    received = profile.powers * profile.channel_gains
    interference = received.sum() - received[i]
    return float(received[i] / (interference + profile.sigma2))


def utility(profile: StaticProfile, i: int, spec: EfficiencySpec) -> float:
    """Energy efficiency R f(SINR)/p in bit/J; 0 for a silent player."""
    _check_index(profile, i)
    p = profile.powers[i]
    if p == 0:
        return 0.0
    return float(profile.rate * eval_f(spec, sinr(profile, i)) / p)


def static_ne(
    channel_gains: Sequence[float],
    sigma2: float,
    spec: EfficiencySpec,
    n_players: Optional[int] = None,
    p_max: float = np.inf,
) -> StaticEquilibrium:
    """Closed-form Nash equilibrium; every player's SINR equals beta*."""
    gains = np.asarray(channel_gains, dtype=float)
    k = len(gains) if n_players is None else int(n_players)
    if k != len(gains):
        raise DomainError(f"static_ne: {len(gains)} gains given for K={k}")
    if np.any(gains <= 0) or sigma2 <= 0:
        raise DomainError("static_ne: gains and sigma2 must be positive")
    b = beta_star(spec)
    denom = 1.0 - (k - 1) * b
    if denom <= 0:
        raise InfeasibleGameError(
            f"static_ne: (K-1) beta* = {(k - 1) * b:.6g} >= 1 for K={k}, "
            f"{spec.label}; equilibrium powers diverge"
        )
    powers = sigma2 / gains * b / denom
    exceeded = bool(np.any(powers > p_max))
    if exceeded:
        logger.warning(
            "static NE powers exceed p_max=%g (max %.6g); reporting unprojected",
            p_max,
            powers.max(),
        )
    return StaticEquilibrium(powers=powers, beta_star=b, cap_exceeded=exceeded)


def best_response(
    profile: StaticProfile,
    i: int,
    spec: EfficiencySpec,
    p_max: float,
    grid_size: int = 2000,
) -> float:
    """Brute-force best response of player ``i`` on [0, p_max].

    Uniform grid search followed by bounded refinement on the winning cell.
    """
    _check_index(profile, i)
    if grid_size < 1000:
        raise DomainError(f"best_response: grid_size must be >= 1000, got {grid_size}")
    gains = profile.channel_gains
    others = float((profile.powers * gains).sum() - profile.powers[i] * gains[i])
    c = gains[i] / (others + profile.sigma2)

    def u(p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        f = eval_f(spec, c * p)
        return np.divide(profile.rate * f, p, out=np.zeros(p.shape), where=p > 0)

    grid = np.linspace(0.0, p_max, grid_size)
    vals = u(grid)
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_size - 1)]
    res = minimize_scalar(
        lambda p: -float(u(np.array(p))),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12 * max(p_max, 1.0)},
    )
    if -res.fun >= vals[k]:
        return float(res.x)
    return float(grid[k])


def utility_curve(
    spec: EfficiencySpec,
    gain: float,
    sigma2: float,
    rate: float,
    p_max: float,
    n_points: int = 200,
) -> pd.DataFrame:
    """Utility of a lone transmitter against its power (bell-shaped curve)."""
    p = np.linspace(0.0, p_max, n_points)
    f = eval_f(spec, p * gain / sigma2)
    u = np.divide(rate * f, p, out=np.zeros_like(p), where=p > 0)
    return pd.DataFrame({"p": p, "utility": u})
