"""Desk-scale invariant suite behind ``powergame check``."""

import logging
from dataclasses import replace
from typing import Callable, List, NamedTuple

import numpy as np

from . import dynamics, efficiency, hjb, kplayer_sim, mfg, static_game
from .config import RunConfig
from .efficiency import EfficiencySpec, Family
from .grid import build_axes
from .utils import PowerGameError, counter_rng, keyed_stream, map_concurrently

logger = logging.getLogger(__name__)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def check_beta_star(cfg: RunConfig) -> CheckResult:
    errs = [
        abs(efficiency.beta_star(EfficiencySpec(Family.EXPONENTIAL, a=a)) - a)
        for a in (0.5, 1.0, 2.0)
    ]
    return CheckResult("beta_star", max(errs) < 1e-10, f"max error {max(errs):.2e}")


def check_static_ne(cfg: RunConfig) -> CheckResult:
    spec = EfficiencySpec(Family.EXPONENTIAL, a=0.4)
    rng = counter_rng(keyed_stream(cfg.simulation.seed, 2))
    worst_sinr = worst_gain = 0.0
    for _ in range(5):
        gains = rng.uniform(0.5, 2.0, size=2)
        eq = static_game.static_ne(gains, 1.0, spec)
        prof = static_game.StaticProfile(eq.powers, gains, 1.0)
        for i in range(2):
            worst_sinr = max(worst_sinr, abs(static_game.sinr(prof, i) - eq.beta_star))
            u0 = static_game.utility(prof, i, spec)
            br = static_game.best_response(prof, i, spec, p_max=10 * eq.powers.max())
            u1 = static_game.utility(prof.with_power(i, br), i, spec)
            worst_gain = max(worst_gain, (u1 - u0) / u0)
    ok = worst_sinr < 1e-9 and worst_gain <= 1e-3
    return CheckResult(
        "static_ne", ok, f"SINR error {worst_sinr:.2e}, best-response gain {worst_gain:.2e}"
    )


def check_ou_moments(cfg: RunConfig) -> CheckResult:
    ou = cfg.game.ou
    if ou.eta == 0:
        return CheckResult("ou_moments", True, "skipped (eta = 0)")
    t, dt, n = 2.0, 0.01, 20_000
    paths = dynamics.simulate_paths(
        n, ou, dt, int(round(t / dt)), cfg.simulation.seed, h0=(0.0, 0.0),
    )
    h = paths[-1, :, 1:]
    mean, _ = dynamics.transient_moments((0.0, 0.0), ou, t)
    z = np.abs(h.mean(axis=0) - mean) / (h.std(axis=0) / np.sqrt(n))
    return CheckResult("ou_moments", bool(np.all(z < 3.5)), f"z-scores {np.round(z, 2)}")


def check_fpk_stationary(cfg: RunConfig) -> CheckResult:
    params = cfg.game
    if params.eta == 0:
        return CheckResult("fpk_stationary", True, "skipped (eta = 0)")
    axes = build_axes(cfg.grid, params.ou, params.t_start, params.t_end)
    m0 = mfg.initial_density(axes, params)
    m = mfg.solve_fpk(hjb.ZeroPolicy(), m0, axes, params.ou)
    drift = float(np.max(np.abs(m.total_mass() - 1)))
    l1 = float(np.abs(m.h_marginal(-1) - m.h_marginal(0)).sum())
    ok = drift < 1e-6 and l1 < 0.05
    return CheckResult("fpk_stationary", ok, f"mass drift {drift:.2e}, L1 {l1:.2e}")


def check_terminal_power(cfg: RunConfig) -> CheckResult:
    params = replace(cfg.game, q_weight=0.0, n_players=1, gains=())
    value = hjb.solve_value(params, hjb.constant_interference(0.0), cfg.grid)
    ax = value.axes
    b = efficiency.beta_star(params.efficiency)
    with np.errstate(divide="ignore"):
        target = params.sigma2 * b / ax.h2
    # interior channel nodes below the cap, upper half of the battery without E_max
    interior = np.zeros(ax.h2.shape, dtype=bool)
    interior[1:-1, 1:-1] = True
    nodes = interior & (target < params.p_max)
    span = max(0.02 * params.horizon, ax.dt)
    slices = np.nonzero(ax.t >= ax.t[-1] - span - 1e-12)[0]
    rows = np.arange(len(ax.E) // 2, len(ax.E) - 1)
    p = value.power.values[np.ix_(slices, rows)][..., nodes]
    err = float(np.max(np.abs(p - target[nodes]) / target[nodes]))
    return CheckResult(
        "terminal_power",
        err < 0.05,
        f"max relative error {err:.2e} over {len(slices)} slices, {len(rows)} energy rows",
    )


def check_off_probability(cfg: RunConfig) -> CheckResult:
    off = cfg.off_probability
    v_e = np.linspace(0.0, off.ve_max, off.n_points)
    table = hjb.off_probability(v_e, cfg.game, off.n_samples, cfg.simulation.seed)
    lower, mc, se = (table[c].to_numpy() for c in ("lower_bound", "mc_estimate", "stderr"))
    ok = (
        bool(np.all(lower <= mc + 3 * se))
        and bool(np.all(np.diff(lower) >= 0))
        and bool(np.all(np.diff(mc) >= 0))
        and lower[0] == 0
        and mc[0] == 0
    )
    return CheckResult("off_probability", ok, f"{len(table)} shadow prices")


def check_exchangeability(cfg: RunConfig) -> CheckResult:
    policy = hjb.ConstantPolicy(cfg.simulation.power)
    ok = kplayer_sim.exchangeability_check(
        8, policy, cfg.game, cfg.simulation.dt, cfg.simulation.seed
    )
    return CheckResult("exchangeability", ok, "bitwise permutation test")


def check_monotone_shutdown(cfg: RunConfig) -> CheckResult:
    worst = 0.0
    for spec in (EfficiencySpec(Family.EXPONENTIAL, a=1.0), EfficiencySpec(Family.SIGMOID, m=10)):
        v_e = np.linspace(0.0, 5.0, 1000)
        p = efficiency.shutdown_curve(spec, 1.0, 1.0, 1e6, v_e)
        worst = max(worst, float(np.max(np.diff(p))))
        if efficiency.gamma_star(spec, 0.0) != efficiency.beta_star(spec):
            return CheckResult("monotone_shutdown", False, f"gamma*(0) != beta* for {spec.label}")
    return CheckResult("monotone_shutdown", worst <= 1e-12, f"largest increase {worst:.2e}")


def check_mfg(cfg: RunConfig) -> CheckResult:
    s = cfg.solver
    sol = mfg.solve_mfg(
        cfg.game,
        cfg.grid,
        damping=s.damping,
        tol=s.tol,
        max_iter=s.max_iter,
        switching=s.switching,
    )
    if not sol.converged:
        return CheckResult("mfg", False, f"no convergence, residual {sol.residual:.2e}")
    rep = mfg.consistency_check(sol, seed=cfg.simulation.seed)
    return CheckResult(
        "mfg",
        rep.passed(s.tol),
        f"{sol.iterations} iterations, deviation {rep.deviation:.2e}, "
        f"duality {rep.duality_error:.2e}, mass {rep.mass_error:.2e}",
    )


SUITE: List[Callable[[RunConfig], CheckResult]] = [
    check_beta_star,
    check_static_ne,
    check_ou_moments,
    check_fpk_stationary,
    check_terminal_power,
    check_off_probability,
    check_exchangeability,
    check_monotone_shutdown,
    check_mfg,
]


def _run_check(check: Callable[[RunConfig], CheckResult], cfg: RunConfig) -> CheckResult:
    try:
        return check(cfg)
    except PowerGameError as e:
        return CheckResult(check.__name__[len("check_"):], False, f"error: {e}")


def run_suite(cfg: RunConfig, threads: int = 1, log_fn=None) -> List[CheckResult]:
    results = map_concurrently(lambda check: _run_check(check, cfg), list(SUITE), threads)
    for i, res in enumerate(results, 1):
        if log_fn:
            status = "ok" if res.passed else "FAILED"
            log_fn(f"[{i}/{len(results)}] {res.name}: {status} ({res.detail})")
        if not res.passed:
            logger.warning("check %s failed: %s", res.name, res.detail)
    return results
