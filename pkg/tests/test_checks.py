import pytest

from powergame import checks, hjb
from powergame.config import RunConfig
from powergame.utils import DomainError


@pytest.mark.parametrize(
    "check",
    [
        checks.check_beta_star,
        checks.check_static_ne,
        checks.check_fpk_stationary,
        checks.check_terminal_power,
        checks.check_exchangeability,
        checks.check_monotone_shutdown,
    ],
)
def test_quick_checks_pass_on_defaults(check):
    res = check(RunConfig())
    assert res.passed, res.detail


def test_suite_turns_errors_into_failures(monkeypatch):
    def check_explodes(cfg):
        raise DomainError("bad input")

    monkeypatch.setattr(checks, "SUITE", [checks.check_beta_star, check_explodes])
    lines = []
    results = checks.run_suite(RunConfig(), log_fn=lines.append)
    assert [r.passed for r in results] == [True, False]
    assert results[1].name == "explodes"
    assert "error: bad input" in results[1].detail
    assert lines[1].startswith("[2/2] explodes: FAILED")


def test_terminal_power_sees_interior_rows_before_the_end(monkeypatch):
    solve = hjb.solve_value

    def solve_with_bad_row(params, interference, grid, **kwargs):
        value = solve(params, interference, grid, **kwargs)
        # one step before T, one row below E_max
        value.power.values[-2, -2] *= 1.5
        return value

    assert checks.check_terminal_power(RunConfig()).passed
    monkeypatch.setattr(hjb, "solve_value", solve_with_bad_row)
    res = checks.check_terminal_power(RunConfig())
    assert not res.passed
    assert "2 slices" in res.detail
