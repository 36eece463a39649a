"""Finite-K stochastic power-control game under one shared feedback policy."""

import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import GameParams
from .dynamics import PowerRule, draw_noise, euler_update, sample_stationary
from .efficiency import reward_rate
from .grid import GridAxes
from .utils import (
    DomainError,
    counter_rng,
    keyed_stream,
    map_concurrently,
    player_streams,
)

logger = logging.getLogger(__name__)

INIT_MODES = ("common", "stationary")


@dataclass(frozen=True)
class PopulationState:
    t: float
    E: np.ndarray
    h: np.ndarray

    def __post_init__(self) -> None:
        E = np.asarray(self.E, dtype=float).reshape(-1)
        h = np.asarray(self.h, dtype=float).reshape(-1, 2)
        if len(E) != len(h):
            raise DomainError(f"PopulationState: {len(E)} energies for {len(h)} channels")
        if np.any(E < 0):
            raise DomainError("PopulationState: energies must be >= 0")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "h", h)

    @property
    def n_players(self) -> int:
        return len(self.E)

    def permute(self, perm: Sequence[int]) -> "PopulationState":
        perm = np.asarray(perm)
        return PopulationState(self.t, self.E[perm], self.h[perm])


@dataclass
class Trajectory:
    """Per-step arrays; axis 0 is time, axis 1 the player."""

    t: np.ndarray
    E: np.ndarray
    h: np.ndarray
    p: np.ndarray
    I: np.ndarray
    u_running: np.ndarray
    utility: np.ndarray

    def state(self, n: int) -> PopulationState:
        return PopulationState(float(self.t[n]), self.E[n], self.h[n])

    def to_frame(self, players: Optional[int] = None) -> pd.DataFrame:
        """Long table (t, player, E, h_x, h_y, p, I, u_running)."""
        k = self.E.shape[1] if players is None else min(players, self.E.shape[1])
        n = len(self.t)
        return pd.DataFrame(
            {
                "t": np.repeat(self.t, k),
                "player": np.tile(np.arange(k), n),
                "E": self.E[:, :k].ravel(),
                "h_x": self.h[:, :k, 0].ravel(),
                "h_y": self.h[:, :k, 1].ravel(),
                "p": self.p[:, :k].ravel(),
                "I": self.I[:, :k].ravel(),
                "u_running": self.u_running[:, :k].ravel(),
            }
        )


def normalized_interference(w: np.ndarray) -> np.ndarray:
    """I_i = sum_{j != i} w_j / K.

    The total is summed in sorted order so it is the same under any relabeling.
    """
    total = np.sort(w).sum()
    return np.maximum((total - w) / len(w), 0.0)


def _n_steps(params: GameParams, dt: float) -> int:
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return int(round(params.horizon / dt))


def initial_population(
    params: GameParams,
    rngs: Sequence[np.random.Generator],
    init: str = "stationary",
) -> PopulationState:
    """Common state (E0, mu) or E0 with i.i.d. stationary channels.

    In stationary mode each player's channel is the first draw of its own stream.
    """
    if init not in INIT_MODES:
        raise DomainError(f"initial_population: unknown init {init!r}")
    k = len(rngs)
    if init == "common":
        h = np.tile(params.ou.mu_vec, (k, 1))
    else:
        h = np.vstack([sample_stationary(params.ou, 1, rng) for rng in rngs])
    return PopulationState(params.t_start, np.full(k, params.e0), h)


def simulate(
    K: int,
    policy: PowerRule,
    params: GameParams,
    dt: float,
    seed: int = 0,
    init: str = "stationary",
    streams: Optional[Sequence[np.random.SeedSequence]] = None,
    initial: Optional[PopulationState] = None,
    initial_interference: float = 0.0,
    noise: Optional[np.ndarray] = None,
) -> Trajectory:
    """Evolve K players; powers use the interference of the previous step.

    ``noise`` of shape (K, n_steps, 2) replaces the streams' standard normal
    increments; initial channels still come from the streams.
    """
    if K < 1:
        raise DomainError(f"simulate: K must be >= 1, got {K}")
    n_steps = _n_steps(params, dt)
    streams = player_streams(seed, K) if streams is None else list(streams)
    if len(streams) != K:
        raise DomainError(f"simulate: {len(streams)} streams for K={K}")
    rngs = [counter_rng(s) for s in streams]
    if initial is None:
        state = initial_population(params, rngs, init)
    else:
        if initial.n_players != K:
            raise DomainError("simulate: initial population size differs from K")
        state = initial
    if noise is None:
        noise = np.stack([draw_noise(rng, n_steps) for rng in rngs], axis=0)
    else:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (K, n_steps, 2):
            raise DomainError(
                f"simulate: noise shape {noise.shape}, expected {(K, n_steps, 2)}"
            )

    ou = params.ou
    spec = params.efficiency
    E, h = state.E.copy(), state.h.copy()
    I_prev = np.full(K, float(initial_interference))
    ts = params.t_start + dt * np.arange(n_steps + 1)
    Es = np.empty((n_steps + 1, K))
    hs = np.empty((n_steps + 1, K, 2))
    ps = np.empty((n_steps + 1, K))
    Is = np.empty((n_steps + 1, K))
    run = np.zeros((n_steps + 1, K))

    for n in range(n_steps + 1):
        p = np.asarray(policy(ts[n], E, h, I_prev), dtype=float)
        p = np.where(E > 0, p, 0.0)
        h2 = (h**2).sum(axis=1)
        I = normalized_interference(p * h2)
        Es[n], hs[n], ps[n], Is[n] = E, h, p, I
        if n == n_steps:
            break
        u = reward_rate(spec, params.rate, h2 / (params.sigma2 + I), p)
        run[n + 1] = run[n] + u * dt
        E, h = euler_update(E, h, p, dt, noise[:, n, :], ou)
        I_prev = I

    utility = run[-1] + params.terminal_utility(Es[-1])
    return Trajectory(ts, Es, hs, ps, Is, run, utility)


class EmpiricalMeasure(NamedTuple):
    mass: np.ndarray
    edges: Tuple[np.ndarray, np.ndarray, np.ndarray]
    out_of_range: int


def bin_edges(nodes: np.ndarray) -> np.ndarray:
    """Cell edges around equally spaced nodes."""
    half = 0.5 * (nodes[1] - nodes[0])
    return np.concatenate([[nodes[0] - half], nodes[:-1] + half, [nodes[-1] + half]])


def empirical_measure(population: PopulationState, axes: GridAxes) -> EmpiricalMeasure:
    """Normalized histogram of (E, x, y) on the grid cells.

    Players outside the box are counted in the edge cells and reported.
    """
    edges = (bin_edges(axes.E), bin_edges(axes.x), bin_edges(axes.y))
    pts = np.column_stack([population.E, population.h])
    lo = np.array([e[0] for e in edges])
    hi = np.array([e[-1] for e in edges])
    outside = int(np.any((pts < lo) | (pts > hi), axis=1).sum())
    if outside:
        logger.warning("empirical_measure: %d of %d players outside the grid box",
                       outside, len(pts))
    # keep clipped points strictly inside the last edge
    pts = np.clip(pts, lo, np.nextafter(hi, lo))
    counts, _ = np.histogramdd(pts, bins=edges)
    return EmpiricalMeasure(counts / len(pts), edges, outside)


def exchangeability_check(
    K: int,
    policy: PowerRule,
    params: GameParams,
    dt: float,
    seed: int,
    perm: Optional[Sequence[int]] = None,
    init: str = "stationary",
) -> bool:
    """Relabel players (states and streams together); trajectories must permute bitwise."""
    streams = player_streams(seed, K)
    if perm is None:
        perm = counter_rng(keyed_stream(seed, K)).permutation(K)
    perm = np.asarray(perm)
    base = simulate(K, policy, params, dt, streams=streams, init=init)
    moved = simulate(K, policy, params, dt, streams=[streams[j] for j in perm], init=init)
    return all(
        np.array_equal(getattr(moved, name), getattr(base, name)[:, perm])
        for name in ("E", "h", "p", "I", "u_running")
    ) and np.array_equal(moved.utility, base.utility[perm])


def constant_policy_interference(
    power: float, params: GameParams, K: Optional[int] = None
) -> float:
    """Stationary mean interference p0 (|mu|^2 + 2 eta^2), times (K-1)/K for finite K."""
    value = power * params.mean_channel_power
    return value if K is None else value * (K - 1) / K


def convergence_report(
    policy: PowerRule,
    params: GameParams,
    k_list: Sequence[int],
    replications: int,
    seed: int,
    i_hat: Callable[[float], float],
    dt: float,
    sample_times: Sequence[float],
    init: str = "stationary",
    threads: int = 1,
    progress_fn: Optional[Callable[[int, int], None]] = None,
) -> pd.DataFrame:
    """Statistics of |I_i(t*) - I_hat(t*)| across players and replications, per K."""
    samples = [int(round((t - params.t_start) / dt)) for t in sample_times]
    n_steps = _n_steps(params, dt)
    if any(not 0 <= n <= n_steps for n in samples):
        raise DomainError("convergence_report: sample time outside the horizon")

    jobs = [(K, r) for K in k_list for r in range(replications)]

    def run(job: Tuple[int, int]) -> np.ndarray:
        K, r = job
        streams = keyed_stream(seed, K, r).spawn(K)
        traj = simulate(K, policy, params, dt, streams=streams, init=init)
        return traj.I[samples]

    results = map_concurrently(run, jobs, threads=threads, progress_fn=progress_fn)
    rows: List[Tuple] = []
    for K in k_list:
        block = np.stack([res for (k, _), res in zip(jobs, results) if k == K])
        exch = exchangeability_check(K, policy, params, dt, seed, init=init)
        for j, t in enumerate(sample_times):
            dev = np.abs(block[:, j, :] - i_hat(t)).ravel()
            rows.append((K, float(t), float(dev.mean()), float(dev.std()), exch))
        logger.info("convergence_report: K=%d done (%d replications)", K, replications)
    return pd.DataFrame(
        rows, columns=["K", "sample_t", "mean_dev", "std_dev", "exchangeable"]
    )
