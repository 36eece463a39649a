"""Single-player value function on the (t, E, x, y) grid and its feedback policy.

The backward sweep is the dynamic programme of the Markov chain built in
``grid``: battery jumps E_i -> E_{i-1} at rate p/dE, channel jumps at the
OU face rates. Every explicit step is a convex combination as long as the
stability bound holds.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import GameParams
from .dynamics import sample_stationary
from .efficiency import (
    gamma_star_array,
    hamiltonian_array,
    max_curvature,
    reward_rate,
    switch_objective,
)
from .grid import (
    ChannelOperator,
    GridAxes,
    GridField,
    GridSpec,
    backward_difference,
    build_axes,
    check_stability,
    energy_generator,
)
from .utils import ConfigError, DomainError, NumericalError, counter_rng, keyed_stream

logger = logging.getLogger(__name__)

InterferencePath = Callable[[float], float]


def constant_interference(value: float) -> InterferencePath:
    if value < 0:
        raise DomainError(f"interference must be >= 0, got {value}")
    return lambda t: float(value)


def tabulated_interference(t: Sequence[float], values: Sequence[float]) -> InterferencePath:
    """Piecewise-linear path through (t_k, I_k)."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise DomainError("interference path must be >= 0")
    return lambda s: float(np.interp(s, t, values))


class FeedbackPolicy:
    """Power rule p(t, E, h, I), vectorized over players."""

    def __call__(
        self, t: float, E: np.ndarray, h: np.ndarray, I: np.ndarray
    ) -> np.ndarray:
        raise NotImplementedError

    def on_grid(self, axes: GridAxes) -> GridField:
        """Node powers used by the density solver."""
        raise NotImplementedError


class ConstantPolicy(FeedbackPolicy):
    def __init__(self, power: float):
        if power < 0:
            raise DomainError(f"ConstantPolicy: power must be >= 0, got {power}")
        self.power = float(power)

    def __call__(self, t, E, h, I):
        E = np.asarray(E, dtype=float)
        return np.where(E > 0, self.power, 0.0)

    def on_grid(self, axes: GridAxes) -> GridField:
        values = np.full((len(axes.t),) + axes.shape, self.power)
        values[:, 0] = 0.0
        return GridField(axes, values, name="p")


class ZeroPolicy(ConstantPolicy):
    def __init__(self) -> None:
        super().__init__(0.0)


@dataclass
class ValueField:
    v: GridField
    shadow_price: GridField
    power: GridField
    reward: GridField
    interference: np.ndarray
    params: GameParams
    switching: str = "node"

    @property
    def axes(self) -> GridAxes:
        return self.v.axes

    def to_frame(self, every: int = 1) -> pd.DataFrame:
        """Columns t, E, h_x, h_y, v, p."""
        frame = self.v.to_frame(every)
        frame["p"] = self.power.to_frame(every)["p"].to_numpy()
        return frame


SWITCHING = ("node", "cell")


def cell_h2_range(axes: GridAxes) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest and largest |h|^2 inside each channel cell, shape (n_x, n_y)."""
    ax = np.abs(axes.x)[:, None]
    ay = np.abs(axes.y)[None, :]
    hx, hy = 0.5 * axes.dx, 0.5 * axes.dy
    lo = np.maximum(ax - hx, 0.0) ** 2 + np.maximum(ay - hy, 0.0) ** 2
    hi = (ax + hx) ** 2 + (ay + hy) ** 2
    return lo, hi


def _positive_length(
    a: np.ndarray, b: np.ndarray, ja: np.ndarray, jb: np.ndarray
) -> np.ndarray:
    """Length of [a, b] where the linear interpolant of (ja, jb) is positive."""
    both = (ja > 0) & (jb > 0)
    cross = (ja > 0) != (jb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ja / (ja - jb)
    part = np.where(ja > 0, s, 1.0 - s) * (b - a)
    return np.where(both, b - a, np.where(cross, part, 0.0))


def _node_power(
    params: GameParams,
    axes: GridAxes,
    interference: float,
    v_e: np.ndarray,
    switching: str = "node",
) -> Tuple[np.ndarray, np.ndarray]:
    """Node powers and running rewards for one time slice.

    ``node`` takes the pointwise optimum at the node. ``cell`` transmits the
    node's on-branch power on the share of the cell's |h|^2 range where
    switching on pays, so the slice depends continuously on the interference.
    """
    spec, rate, p_max = params.efficiency, params.rate, params.p_max
    noise = params.sigma2 + interference
    h2 = np.broadcast_to(axes.h2[None, :, :], v_e.shape)
    c = h2 / noise
    if switching == "node":
        _, p = hamiltonian_array(spec, c, v_e, rate, p_max)
        p = p.copy()
        p[0] = 0.0
        return p, reward_rate(spec, rate, c, p)
    lo, hi = (np.broadcast_to(r[None, :, :], v_e.shape) for r in cell_h2_range(axes))
    j_lo, _ = switch_objective(spec, lo / noise, v_e, rate, p_max)
    j_mid, p_on = switch_objective(spec, c, v_e, rate, p_max)
    j_hi, _ = switch_objective(spec, hi / noise, v_e, rate, p_max)
    share = (
        _positive_length(lo, h2, j_lo, j_mid) + _positive_length(h2, hi, j_mid, j_hi)
    ) / (hi - lo)
    p = share * p_on
    reward = share * reward_rate(spec, rate, c, p_on)
    p[0] = 0.0
    reward[0] = 0.0
    return p, reward


def _check_switching(switching: str) -> None:
    if switching not in SWITCHING:
        raise ConfigError(
            f"solver.switching: expected one of {list(SWITCHING)}, got {switching!r}"
        )


def _check_finite(v: np.ndarray, axes: GridAxes, k: int) -> None:
    bad = np.argwhere(~np.isfinite(v))
    if len(bad):
        i, j, l = bad[0]
        raise NumericalError(
            f"solve_value: non-finite value at t={axes.t[k]:.6g}, E={axes.E[i]:.6g}, "
            f"h=({axes.x[j]:.6g}, {axes.y[l]:.6g})"
        )


def solve_value(
    params: GameParams,
    interference_path: InterferencePath,
    grid: GridSpec,
    log_fn=None,
    switching: str = "node",
) -> ValueField:
    """Explicit backward sweep from v(T') = q."""
    _check_switching(switching)
    params.validate()
    axes = build_axes(grid, params.ou, params.t_start, params.t_end)
    op = ChannelOperator(axes, params.ou)
    check_stability(axes, op, params.p_max)

    interference = np.array([interference_path(t) for t in axes.t], dtype=float)
    if np.any(~np.isfinite(interference)) or np.any(interference < 0):
        raise DomainError("solve_value: interference path must be finite and >= 0")

    n_t = len(axes.t)
    dt, dE = axes.dt, axes.dE
    v = np.empty((n_t,) + axes.shape)
    shadow = np.empty_like(v)
    power = np.empty_like(v)
    reward = np.empty_like(v)

    v[-1] = params.terminal_utility(axes.E)[:, None, None] * np.ones(axes.shape)
    for k in range(n_t - 1, -1, -1):
        v_e = backward_difference(v[k + 1] if k < n_t - 1 else v[k], dE)
        p, r = _node_power(params, axes, interference[k], v_e, switching)
        shadow[k], power[k], reward[k] = v_e, p, r
        if k == n_t - 1:
            continue
        nxt = v[k + 1]
        v[k] = nxt + dt * (r + energy_generator(nxt, p, dE) + op.generator(nxt))
        _check_finite(v[k], axes, k)
    if log_fn:
        log_fn(f"HJB sweep done: {n_t - 1} steps, v(T) in [{v[0].min():.4g}, {v[0].max():.4g}]")
    logger.debug("solve_value: %d steps on %s nodes (%s switching)", n_t - 1, axes.shape, switching)
    return ValueField(
        v=GridField(axes, v, name="v"),
        shadow_price=GridField(axes, shadow, name="v_E"),
        power=GridField(axes, power, name="p"),
        reward=GridField(axes, reward, name="u"),
        interference=interference,
        params=params,
        switching=switching,
    )


class ValueFunctionPolicy(FeedbackPolicy):
    """p = min(gamma*(theta) (sigma2 + I)/|h|^2, p_max), 0 on an empty battery.

    theta = (v_E/R) ((sigma2 + I)/|h|^2)^2 with v_E interpolated from the
    value field. ``on_grid`` hands the density solver the sweep's node powers,
    which under ``cell`` switching are cell shares of the on-branch power.
    """

    def __init__(self, value: ValueField, node_power: GridField):
        self.value = value
        self.params = value.params
        self._node_power = node_power

    def __call__(self, t, E, h, I):
        E = np.asarray(E, dtype=float).reshape(-1)
        h = np.asarray(h, dtype=float).reshape(-1, 2)
        I = np.broadcast_to(np.asarray(I, dtype=float), E.shape)
        v_e = self.value.shadow_price(t, E, h)
        c = (h**2).sum(axis=1) / (self.params.sigma2 + I)
        _, p = hamiltonian_array(
            self.params.efficiency, c, v_e, self.params.rate, self.params.p_max
        )
        return np.where(E > 0, p, 0.0)

    def on_grid(self, axes: Optional[GridAxes] = None) -> GridField:
        if axes is not None and axes.shape != self._node_power.axes.shape:
            raise DomainError("ValueFunctionPolicy.on_grid: grid mismatch")
        return self._node_power


def extract_policy(
    value: ValueField,
    params: Optional[GameParams] = None,
    interference_path: Optional[InterferencePath] = None,
) -> ValueFunctionPolicy:
    """Feedback policy of a solved value field.

    Node powers are recomputed only when a different interference path is
    given; otherwise the sweep's own powers are reused.
    """
    if params is not None and params != value.params:
        raise DomainError("extract_policy: params differ from the solved value field")
    if interference_path is None:
        return ValueFunctionPolicy(value, value.power)
    axes = value.axes
    power = np.empty_like(value.power.values)
    for k, t in enumerate(axes.t):
        power[k], _ = _node_power(
            value.params,
            axes,
            interference_path(t),
            value.shadow_price.values[k],
            value.switching,
        )
    return ValueFunctionPolicy(value, GridField(axes, power, name="p"))


def off_probability(
    v_e: Sequence[float],
    params: GameParams,
    n_samples: int,
    seed: int = 0,
) -> pd.DataFrame:
    """Probability that the single-player transmitter is off, per shadow price.

    ``lower_bound`` counts draws with |h|^4 <= 2 v_E sigma^4 / (R max f''),
    ``mc_estimate`` counts draws with gamma*(theta(h)) = 0, on the same
    stationary channel draws.
    """
    if n_samples < 10_000:
        raise DomainError(f"off_probability: n_samples must be >= 10000, got {n_samples}")
    v_e = np.asarray(v_e, dtype=float)
    if np.any(v_e < 0):
        raise DomainError("off_probability: shadow prices must be >= 0")
    rng = counter_rng(keyed_stream(seed, 0))
    h = sample_stationary(params.ou, n_samples, rng)
    h4 = (h**2).sum(axis=1) ** 2
    curv = max_curvature(params.efficiency).value
    s4 = params.sigma2**2
    rows = []
    for ve in v_e:
        if params.rate > 0:
            limit = 2 * ve * s4 / (params.rate * curv)
            with np.errstate(divide="ignore"):
                theta = (ve / params.rate) * s4 / h4
        else:
            limit = np.inf
            theta = np.full(n_samples, np.inf)
        lower = float(np.mean(h4 <= limit))
        off = float(np.mean(gamma_star_array(params.efficiency, theta) == 0.0))
        rows.append((ve, lower, off, float(np.sqrt(off * (1 - off) / n_samples))))
    logger.info("off_probability: %d shadow prices, max f''=%.6g", len(v_e), curv)
    return pd.DataFrame(rows, columns=["v_E", "lower_bound", "mc_estimate", "stderr"])
