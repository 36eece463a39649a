from dataclasses import replace

import numpy as np
import pytest

from powergame.config import GameParams
from powergame.efficiency import beta_star, eval_f, theta_max
from powergame.grid import GridSpec, build_axes
from powergame.hjb import (
    ConstantPolicy,
    ZeroPolicy,
    cell_h2_range,
    constant_interference,
    extract_policy,
    off_probability,
    solve_value,
    tabulated_interference,
)
from powergame.utils import ConfigError, DomainError


def test_no_rate_gives_zero_value_and_policy(small_grid):
    params = GameParams(rate=0.0)
    value = solve_value(params, constant_interference(0.0), small_grid)
    assert np.all(value.v.values == 0.0)
    assert np.all(value.power.values == 0.0)
    policy = extract_policy(value)
    p = policy(0.5, np.array([1.0, 2.0]), np.array([[1.0, 0.0], [0.5, 0.5]]), 0.0)
    np.testing.assert_array_equal(p, 0.0)


def test_terminal_value_is_terminal_utility(small_grid):
    params = GameParams(q_weight=0.7)
    value = solve_value(params, constant_interference(0.0), small_grid)
    ax = value.axes
    np.testing.assert_allclose(
        value.v.values[-1], 0.7 * ax.E[:, None, None] * np.ones(ax.shape)
    )


def test_terminal_power_is_static_single_player_optimum(bench_params, bench_grid):
    value = solve_value(bench_params, constant_interference(0.0), bench_grid)
    ax = value.axes
    target = bench_params.sigma2 * beta_star(bench_params.efficiency) / ax.h2
    inside = target < bench_params.p_max
    assert inside.any()
    for k in (-1, -2):
        p = value.power.values[k, 1:]
        want = np.broadcast_to(target[inside], p[:, inside].shape)
        np.testing.assert_allclose(p[:, inside], want, rtol=1e-9)
        assert np.all(p[:, ~inside] <= bench_params.p_max)
        assert np.all(value.power.values[k, 0] == 0.0)


def test_value_grows_with_remaining_horizon(bench_params, small_grid):
    value = solve_value(bench_params, constant_interference(0.3), small_grid)
    v = value.v.values
    assert np.all(v[:-1] >= v[1:] - 1e-12)
    assert np.all(v >= 0)


def test_high_shadow_price_switches_off(small_grid):
    params = GameParams(q_weight=1.0)
    value = solve_value(params, constant_interference(0.0), small_grid)
    ax = value.axes
    # at T' the shadow price is q' = 1, so theta = 1 / |h|^4
    with np.errstate(divide="ignore"):
        off = 1.0 / ax.h2**2 >= theta_max(params.efficiency).value
    assert off.any()
    assert np.all(value.power.values[-1][:, off] == 0.0)


def test_frozen_channel_matches_energy_dynamic_programme():
    params = GameParams(eta=0.0, p_max=2.0)
    grid = GridSpec(e_max=2.0, n_e=10, n_x=9, n_y=9, n_t=30, min_halfwidth=1.0)
    value = solve_value(params, constant_interference(0.0), grid)
    ax = value.axes
    j = int(np.argmin(np.abs(ax.x - 1.0)))
    l = int(np.argmin(np.abs(ax.y)))
    assert ax.x[j] == pytest.approx(1.0) and ax.y[l] == pytest.approx(0.0)

    # direct DP over (t, E) with the channel frozen at mu, c = |mu|^2 / sigma2
    p_grid = np.linspace(0.0, params.p_max, 20001)
    reward = np.zeros_like(p_grid)
    reward[1:] = eval_f(params.efficiency, p_grid[1:]) / p_grid[1:]
    dt, dE = ax.dt, ax.dE
    v = np.zeros(len(ax.E))
    for _ in range(len(ax.t) - 1):
        nxt = v.copy()
        for i in range(1, len(ax.E)):
            nxt[i] = np.max(v[i] + dt * (reward + p_grid / dE * (v[i - 1] - v[i])))
        v = nxt
    np.testing.assert_allclose(value.v.values[0, :, j, l], v, rtol=2e-2, atol=1e-9)


def test_policy_reproduces_node_powers(bench_params, small_grid):
    value = solve_value(bench_params, constant_interference(0.2), small_grid)
    policy = extract_policy(value)
    ax = value.axes
    k, j, l = 5, 3, 6
    h = np.tile([ax.x[j], ax.y[l]], (len(ax.E), 1))
    p = policy(ax.t[k], ax.E, h, 0.2)
    np.testing.assert_allclose(p, value.power.values[k, :, j, l], rtol=1e-9, atol=1e-12)
    assert p[0] == 0.0


def test_extract_policy_with_new_interference(bench_params, small_grid):
    value = solve_value(bench_params, constant_interference(0.0), small_grid)
    louder = extract_policy(value, interference_path=constant_interference(5.0))
    assert louder.on_grid().values.shape == value.power.values.shape
    assert not np.array_equal(louder.on_grid().values, value.power.values)
    with pytest.raises(DomainError):
        extract_policy(value, params=replace(bench_params, sigma2=2.0))


def test_interference_validation(bench_params, small_grid):
    with pytest.raises(DomainError):
        constant_interference(-1.0)
    with pytest.raises(DomainError):
        tabulated_interference([0.0, 1.0], [0.5, -0.1])
    with pytest.raises(DomainError):
        solve_value(bench_params, lambda t: -1.0, small_grid)


def test_unstable_time_step(bench_params):
    with pytest.raises(ConfigError, match="grid.n_t"):
        solve_value(bench_params, constant_interference(0.0), GridSpec(n_t=3))


def test_constant_policies_on_grid(bench_params, small_grid):
    ax = build_axes(small_grid, bench_params.ou, 0.0, 1.0)
    p = ConstantPolicy(0.5).on_grid(ax).values
    assert np.all(p[:, 0] == 0.0)
    assert np.all(p[:, 1:] == 0.5)
    assert np.all(ZeroPolicy().on_grid(ax).values == 0.0)
    out = ConstantPolicy(0.5)(0.0, np.array([0.0, 1.0]), np.zeros((2, 2)), np.zeros(2))
    np.testing.assert_array_equal(out, [0.0, 0.5])
    with pytest.raises(DomainError):
        ConstantPolicy(-0.1)


def test_off_probability_sweep(bench_params):
    v_e = np.linspace(0.0, 2.0, 20)
    table = off_probability(v_e, bench_params, 100_000, seed=3)
    assert list(table.columns) == ["v_E", "lower_bound", "mc_estimate", "stderr"]
    lower = table["lower_bound"].to_numpy()
    mc = table["mc_estimate"].to_numpy()
    assert lower[0] == 0.0 and mc[0] == 0.0
    assert np.all(lower <= mc)
    assert np.all(np.diff(lower) >= 0)
    assert np.all(np.diff(mc) >= 0)
    again = off_probability(v_e, bench_params, 100_000, seed=3)
    assert table.equals(again)


def test_off_probability_limits(bench_params):
    table = off_probability([1e9], bench_params, 10_000)
    assert table["lower_bound"].iloc[0] == 1.0
    assert table["mc_estimate"].iloc[0] == 1.0
    with pytest.raises(DomainError):
        off_probability([0.5], bench_params, 5_000)
    with pytest.raises(DomainError):
        off_probability([-0.5], bench_params, 10_000)


def test_cell_h2_range_brackets_the_nodes(bench_params, bench_grid):
    ax = build_axes(bench_grid, bench_params.ou, 0.0, 1.0)
    lo, hi = cell_h2_range(ax)
    assert lo.shape == hi.shape == ax.h2.shape
    assert np.all(lo <= ax.h2) and np.all(ax.h2 <= hi)
    assert np.all(hi > lo)
    assert lo.min() == 0.0


def test_cell_switching_is_continuous_in_interference(bench_params, small_grid):
    a = solve_value(bench_params, constant_interference(0.5), small_grid, switching="cell")
    b = solve_value(
        bench_params, constant_interference(0.5 + 1e-6), small_grid, switching="cell"
    )
    assert np.max(np.abs(a.power.values - b.power.values)) < 1e-3
    assert a.switching == "cell"


def test_cell_switching_matches_node_without_shadow_price(bench_params, bench_grid):
    # q = 0 gives v_E = 0 on the last slice, so every cell is fully on
    node = solve_value(bench_params, constant_interference(0.2), bench_grid)
    cell = solve_value(
        bench_params, constant_interference(0.2), bench_grid, switching="cell"
    )
    np.testing.assert_allclose(cell.power.values[-1], node.power.values[-1], rtol=1e-12)
    np.testing.assert_allclose(cell.reward.values[-1], node.reward.values[-1], rtol=1e-12)
    assert np.all(cell.power.values <= bench_params.p_max)


def test_unknown_switching(bench_params, small_grid):
    with pytest.raises(ConfigError, match="solver.switching"):
        solve_value(bench_params, constant_interference(0.0), small_grid, switching="edge")


def test_value_is_stable_under_grid_refinement(bench_params, bench_grid):
    fine_grid = replace(
        bench_grid,
        n_e=2 * bench_grid.n_e,
        n_x=2 * bench_grid.n_x,
        n_y=2 * bench_grid.n_y,
        n_t=2 * bench_grid.n_t,
    )
    E, h = np.array([bench_params.e0]), np.array([[1.0, 0.0]])
    coarse = solve_value(bench_params, constant_interference(0.0), bench_grid)
    fine = solve_value(bench_params, constant_interference(0.0), fine_grid)
    v0 = coarse.v(bench_params.t_start, E, h)[0]
    v1 = fine.v(bench_params.t_start, E, h)[0]
    assert v0 > 0
    assert abs(v1 - v0) / v0 < 0.05
