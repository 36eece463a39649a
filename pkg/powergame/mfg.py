"""Mean-field equilibrium: forward density transport coupled to the value sweep."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd

from .config import GameParams
from .dynamics import OUParams, stationary_density
from .efficiency import beta_star, hamiltonian_array, shutdown_threshold
from .grid import (
    ChannelOperator,
    GridAxes,
    GridField,
    GridSpec,
    build_axes,
    check_stability,
    energy_generator,
    energy_transport,
)
from .hjb import (
    SWITCHING,
    FeedbackPolicy,
    ValueField,
    extract_policy,
    solve_value,
    tabulated_interference,
)
from .utils import ConfigError, DomainError, NumericalError, counter_rng, keyed_stream

logger = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12
MASS_TOL = 1e-6


class DensityField(GridField):
    """Population density over (t, E, x, y); cell masses are m * cell_volume."""

    def masses(self) -> np.ndarray:
        return self.values * self.axes.cell_volume

    def total_mass(self) -> np.ndarray:
        return self.masses().sum(axis=(1, 2, 3))

    def h_marginal(self, k: int) -> np.ndarray:
        """Cell masses of the channel, shape (n_x, n_y)."""
        return self.masses()[k].sum(axis=0)

    def mean_energy(self) -> np.ndarray:
        M = self.masses()
        return np.einsum("kexy,e->k", M, self.axes.E) / M.sum(axis=(1, 2, 3))


@dataclass
class MfgSolution:
    value: ValueField
    m: DensityField
    I_hat: np.ndarray
    policy: FeedbackPolicy
    iterations: int
    residual: float
    converged: bool
    history: pd.DataFrame
    params: GameParams

    @property
    def axes(self) -> GridAxes:
        return self.m.axes

    def interference_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.axes.t, "I_hat": self.I_hat})


def initial_density(axes: GridAxes, params: GameParams) -> np.ndarray:
    """Stationary channel law times a triangular E profile around e0 (2 cells wide)."""
    ou = params.ou
    if ou.eta > 0:
        X, Y = np.meshgrid(axes.x, axes.y, indexing="ij")
        chan = stationary_density(ou, np.stack([X, Y], axis=-1))
    else:
        chan = np.zeros((len(axes.x), len(axes.y)))
        chan[np.argmin(np.abs(axes.x - ou.mu[0])), np.argmin(np.abs(axes.y - ou.mu[1]))] = 1
    e0 = np.clip(params.e0, axes.E[0], axes.E[-1])
    prof = np.maximum(0.0, 1.0 - np.abs(axes.E - e0) / (2 * axes.dE))
    m = prof[:, None, None] * chan[None, :, :]
    return m / (m.sum() * axes.cell_volume)


def _check_initial(m_T: np.ndarray, axes: GridAxes) -> None:
    if m_T.shape != axes.shape:
        raise DomainError(f"solve_fpk: m_T shape {m_T.shape}, expected {axes.shape}")
    if np.any(m_T < 0):
        raise DomainError("solve_fpk: initial density must be nonnegative")
    mass = m_T.sum() * axes.cell_volume
    if abs(mass - 1) > MASS_TOL:
        raise DomainError(f"solve_fpk: initial mass is {mass:.9g}, expected 1")


def solve_fpk(
    policy: FeedbackPolicy, m_T: np.ndarray, axes: GridAxes, ou: OUParams
) -> DensityField:
    """Forward conservative transport of cell masses under the policy's node powers."""
    _check_initial(m_T, axes)
    alpha = policy.on_grid(axes).values
    op = ChannelOperator(axes, ou)
    check_stability(axes, op, max(float(alpha.max()), 0.0))
    vol, dt, dE = axes.cell_volume, axes.dt, axes.dE

    M = np.empty((len(axes.t),) + axes.shape)
    M[0] = m_T * vol
    for k in range(len(axes.t) - 1):
        nxt = M[k] + dt * (energy_transport(M[k], alpha[k], dE) + op.transport(M[k]))
        low = nxt.min() / vol
        if low < 0:
            if low < -NEGATIVE_TOL:
                i, j, l = np.unravel_index(np.argmin(nxt), nxt.shape)
                raise NumericalError(
                    f"solve_fpk: density {low:.3e} at t={axes.t[k + 1]:.6g}, "
                    f"E={axes.E[i]:.6g}, h=({axes.x[j]:.6g}, {axes.y[l]:.6g})"
                )
            total = M[k].sum()
            nxt = np.maximum(nxt, 0.0)
            nxt *= total / nxt.sum()
            logger.debug("solve_fpk: clipped round-off negatives at step %d", k + 1)
        M[k + 1] = nxt
    return DensityField(axes, M / vol, name="m")


def mean_interference(
    m: np.ndarray, alpha: np.ndarray, axes: GridAxes
) -> float:
    """I_hat = sum over cells of |h|^2 alpha m cell_volume."""
    return float((axes.h2[None, :, :] * alpha * m).sum() * axes.cell_volume)


def interference_path(m: DensityField, policy: FeedbackPolicy) -> np.ndarray:
    alpha = policy.on_grid(m.axes).values
    return np.array(
        [mean_interference(m.values[k], alpha[k], m.axes) for k in range(len(m.axes.t))]
    )


def initial_interference(params: GameParams) -> float:
    """Symmetric static NE interference under the mean channel power, capped."""
    if params.rate == 0:
        return 0.0
    cap = params.p_max * params.mean_channel_power
    b = beta_star(params.efficiency)
    if b >= 1:
        return cap
    return min(params.sigma2 * b / (1 - b), cap)


def solve_mfg(
    params: GameParams,
    grid: GridSpec,
    m_T: Optional[np.ndarray] = None,
    damping: float = 0.5,
    tol: float = 1e-3,
    max_iter: int = 50,
    switching: str = "cell",
    progress_fn: Optional[Callable[[int, int], None]] = None,
    log_fn=None,
) -> MfgSolution:
    """Damped Picard iteration on the interference path.

    Stops when the undamped residual sup_t |Phi(I) - I| drops below ``tol``
    and returns that iterate with the value, policy and density built from it.
    The step is halved, down to a quarter of ``damping``, whenever the
    residual grows.
    """
    if not 0 < damping <= 1:
        raise ConfigError(f"solver.damping: must lie in (0, 1], got {damping}")
    if tol <= 0:
        raise ConfigError(f"solver.tol: must be positive, got {tol}")
    if max_iter < 1:
        raise ConfigError(f"solver.max_iter: must be >= 1, got {max_iter}")
    if switching not in SWITCHING:
        raise ConfigError(
            f"solver.switching: expected one of {list(SWITCHING)}, got {switching!r}"
        )
    params.validate()
    axes = build_axes(grid, params.ou, params.t_start, params.t_end)
    m_T = initial_density(axes, params) if m_T is None else np.asarray(m_T, dtype=float)

    I = np.full(len(axes.t), initial_interference(params))
    step, floor = damping, damping / 4
    previous = np.inf
    best = None
    rows = []
    for it in range(1, max_iter + 1):
        value = solve_value(
            params, tabulated_interference(axes.t, I), grid, switching=switching
        )
        policy = extract_policy(value)
        m = solve_fpk(policy, m_T, axes, params.ou)
        I_new = interference_path(m, policy)
        residual = float(np.max(np.abs(I_new - I)))
        rows.append((it, residual, float(I.mean()), step))
        logger.debug("solve_mfg: iter %d residual %.3e step %.3g", it, residual, step)
        if log_fn:
            log_fn(f"iter {it}: residual {residual:.3e}")
        if progress_fn:
            progress_fn(it, max_iter)
        if best is None or residual < best[0]:
            best = (residual, it, I.copy(), value, policy, m)
        if residual < tol:
            break
        if residual > previous and step > floor:
            step = max(step / 2, floor)
        previous = residual
        I = (1 - step) * I + step * I_new

    residual, it_best, I_best, value, policy, m = best
    converged = residual < tol
    if converged:
        logger.info("solve_mfg: converged in %d iterations (residual %.3e)", it_best, residual)
    else:
        logger.warning(
            "solve_mfg: no convergence in %d iterations; best residual %.3e at iter %d",
            max_iter, residual, it_best,
        )
    return MfgSolution(
        value=value,
        m=m,
        I_hat=I_best,
        policy=policy,
        iterations=len(rows),
        residual=residual,
        converged=converged,
        history=pd.DataFrame(rows, columns=["iter", "residual", "I_mean", "damping"]),
        params=params,
    )


@dataclass
class ConsistencyReport:
    deviation: float
    hjb_residual: float
    fpk_residual: float
    duality_error: float
    monotone_shutdown: bool
    mass_error: float

    def passed(self, tol: float) -> bool:
        return (
            self.deviation <= 2 * tol
            and self.hjb_residual < 1e-9
            and self.fpk_residual < 1e-9
            and self.duality_error < 1e-6
            and self.monotone_shutdown
            and self.mass_error < MASS_TOL
        )


def _monotone_shutdown(sol: MfgSolution, n_nodes: int, n_prices: int, seed: int) -> bool:
    axes, params = sol.axes, sol.params
    rng = counter_rng(keyed_stream(seed, 4))
    off = shutdown_threshold(params.efficiency).value
    for _ in range(n_nodes):
        k = rng.integers(len(axes.t))
        j, l = rng.integers(len(axes.x)), rng.integers(len(axes.y))
        c = axes.h2[j, l] / (params.sigma2 + sol.I_hat[k])
        if c <= 0:
            continue
        v_e = np.linspace(0.0, 2 * off * max(params.rate, 1.0) * c**2, n_prices)
        _, p = hamiltonian_array(params.efficiency, np.full(n_prices, c), v_e,
                                 params.rate, params.p_max)
        if np.any(np.diff(p) > 1e-12 * params.p_max):
            return False
    return True


def consistency_check(sol: MfgSolution, seed: int = 0) -> ConsistencyReport:
    """Re-run the forward transport under the solution's policy and audit both sweeps."""
    axes, params = sol.axes, sol.params
    op = ChannelOperator(axes, params.ou)
    dt, dE, vol = axes.dt, axes.dE, axes.cell_volume

    m = solve_fpk(sol.policy, sol.m.values[0], axes, params.ou)
    deviation = float(np.max(np.abs(interference_path(m, sol.policy) - sol.I_hat)))

    v = sol.value.v.values
    p = sol.value.power.values
    r = sol.value.reward.values
    M = sol.m.masses()
    inner = (slice(None), slice(1, -1), slice(1, -1))
    hjb_res = fpk_res = 0.0
    lhs_terms = 0.0
    for k in range(len(axes.t) - 1):
        step = v[k + 1] + dt * (r[k] + energy_generator(v[k + 1], p[k], dE)
                                + op.generator(v[k + 1]))
        hjb_res = max(hjb_res, float(np.abs(v[k] - step)[inner].max()))
        fwd = M[k] + dt * (energy_transport(M[k], p[k], dE) + op.transport(M[k]))
        fpk_res = max(fpk_res, float(np.abs(M[k + 1] - fwd)[inner].max() / vol))
        lhs_terms += dt * float((M[k] * r[k]).sum())
    # sum(v m) at T minus at T' equals the accumulated running reward
    drop = float((M[0] * v[0]).sum() - (M[-1] * v[-1]).sum())
    duality = abs(drop - lhs_terms) / max(abs(lhs_terms), 1.0)

    return ConsistencyReport(
        deviation=deviation,
        hjb_residual=hjb_res,
        fpk_residual=fpk_res,
        duality_error=duality,
        monotone_shutdown=_monotone_shutdown(sol, 100, 1000, seed),
        mass_error=float(np.max(np.abs(sol.m.total_mass() - 1))),
    )
