#!/usr/bin/env python3
import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .checks import run_suite
from .config import RunConfig, dump_config, load_config
from .dynamics import simulate_paths, transient_moments
from .efficiency import beta_star
from .hjb import ConstantPolicy, constant_interference, off_probability, solve_value
from .kplayer_sim import constant_policy_interference, convergence_report, simulate
from .mfg import consistency_check, solve_mfg
from .static_game import StaticProfile, sinr, static_ne, utility, utility_curve
from .utils import (
    ConfigError,
    DomainError,
    NumericalError,
    text_digest,
    write_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4


class Run:
    """One subcommand invocation: config, output directory and written files."""

    def __init__(self, cfg: RunConfig, out_dir: Path, threads: int):
        self.cfg = cfg
        self.out_dir = out_dir
        self.threads = threads
        self.files: List[str] = []
        self.extra: Dict[str, object] = {}

    def save(self, frame: pd.DataFrame, name: str) -> None:
        write_csv(frame, self.out_dir / name, log_fn=print)
        self.files.append(name)


def _gains(cfg: RunConfig) -> np.ndarray:
    g = cfg.game
    return np.asarray(g.gains if g.gains else [1.0] * g.n_players, dtype=float)


def cmd_static_ne(run: Run) -> None:
    g = run.cfg.game
    b = beta_star(g.efficiency)
    if (g.n_players - 1) * b >= 1:
        raise ConfigError(
            f"game.n_players: (K-1) beta* = {(g.n_players - 1) * b:.6g} >= 1 for "
            f"{g.efficiency.label}; the static game has no finite equilibrium"
        )
    gains = _gains(run.cfg)
    print(f"[1/2] Solving static NE for K={g.n_players}, beta*={b:.10g}")
    eq = static_ne(gains, g.sigma2, g.efficiency, g.n_players, p_max=g.p_max)
    prof = StaticProfile(eq.powers, gains, g.sigma2, rate=g.rate)
    frame = pd.DataFrame(
        {
            "player": np.arange(g.n_players),
            "gain": gains,
            "power": eq.powers,
            "sinr": [sinr(prof, i) for i in range(g.n_players)],
            "utility": [utility(prof, i, g.efficiency) for i in range(g.n_players)],
        }
    )
    print("[2/2] Writing results")
    run.save(frame, "static_ne.csv")
    run.extra["cap_exceeded"] = eq.cap_exceeded


def cmd_utility_curve(run: Run) -> None:
    g = run.cfg.game
    print("[1/1] Tabulating utility against power")
    frame = utility_curve(g.efficiency, float(_gains(run.cfg)[0]), g.sigma2, g.rate, g.p_max)
    run.save(frame, "utility_curve.csv")


def cmd_simulate_channel(run: Run) -> None:
    g, sim = run.cfg.game, run.cfg.simulation
    n_steps = int(round(g.horizon / sim.dt))
    h0 = None if sim.init == "stationary" else g.mu
    print(f"[1/2] Simulating {sim.n_paths} channel paths, {n_steps} steps")
    paths = simulate_paths(
        sim.n_paths, g.ou, sim.dt, n_steps, sim.seed, h0=h0, e0=g.e0, threads=run.threads
    )
    t = g.t_start + sim.dt * np.arange(n_steps + 1)
    k = min(sim.record_paths, sim.n_paths)
    rec = paths[:, :k, :]
    run.save(
        pd.DataFrame(
            {
                "t": np.repeat(t, k),
                "path_id": np.tile(np.arange(k), len(t)),
                "E": rec[:, :, 0].ravel(),
                "h_x": rec[:, :, 1].ravel(),
                "h_y": rec[:, :, 2].ravel(),
            }
        ),
        "channel_paths.csv",
    )
    print("[2/2] Comparing moments with the closed form")
    h = paths[:, :, 1:]
    frame = pd.DataFrame(
        {
            "t": t,
            "mean_x": h[:, :, 0].mean(axis=1),
            "mean_y": h[:, :, 1].mean(axis=1),
            "second_x": (h[:, :, 0] ** 2).mean(axis=1),
            "second_y": (h[:, :, 1] ** 2).mean(axis=1),
        }
    )
    if h0 is not None:
        exact = [transient_moments(h0, g.ou, s - g.t_start) for s in t]
        frame["exact_mean_x"] = [m[0] for m, _ in exact]
        frame["exact_mean_y"] = [m[1] for m, _ in exact]
        frame["exact_second_x"] = [s[0] for _, s in exact]
        frame["exact_second_y"] = [s[1] for _, s in exact]
    run.save(frame, "channel_moments.csv")


def cmd_solve_single(run: Run) -> None:
    cfg = run.cfg
    print("[1/2] Solving single-player HJB (no interference)")
    value = solve_value(cfg.game, constant_interference(0.0), cfg.grid, log_fn=print)
    print("[2/2] Writing value and policy")
    run.save(value.to_frame(cfg.output.snapshot_every), "value_policy.csv")


def cmd_off_probability(run: Run) -> None:
    cfg = run.cfg
    off = cfg.off_probability
    v_e = np.linspace(0.0, off.ve_max, off.n_points)
    print(f"[1/1] Off-probability sweep over {off.n_points} shadow prices")
    table = off_probability(v_e, cfg.game, off.n_samples, cfg.simulation.seed)
    run.save(table, "off_probability.csv")


def cmd_simulate_k(run: Run) -> None:
    cfg = run.cfg
    g, sim = cfg.game, cfg.simulation
    if sim.policy == "mfg":
        print("[1/3] Solving the mean-field equilibrium for the policy")
        s = cfg.solver
        sol = solve_mfg(
            g,
            cfg.grid,
            damping=s.damping,
            tol=s.tol,
            max_iter=s.max_iter,
            switching=s.switching,
        )
        policy = sol.policy
        t_nodes, i_nodes = sol.axes.t, sol.I_hat

        def i_hat(t: float) -> float:
            return float(np.interp(t, t_nodes, i_nodes))

    else:
        print(f"[1/3] Constant policy p={sim.power:g}")
        policy = ConstantPolicy(sim.power)
        level = constant_policy_interference(sim.power, g)

        def i_hat(t: float) -> float:
            return level

    K = sim.k_list[0]
    print(f"[2/3] Recording one trajectory with K={K}")
    traj = simulate(K, policy, g, sim.dt, seed=sim.seed, init=sim.init)
    run.save(traj.to_frame(sim.record_paths), "trajectory.csv")

    print(f"[3/3] Convergence report for K in {list(sim.k_list)}")
    report = convergence_report(
        policy, g, sim.k_list, sim.replications, sim.seed, i_hat, sim.dt,
        sim.sample_times, init=sim.init, threads=run.threads,
    )
    run.save(report, "convergence.csv")


def cmd_solve_mfg(run: Run) -> None:
    cfg = run.cfg
    s = cfg.solver
    print(f"[1/3] Picard iteration (damping={s.damping:g}, tol={s.tol:g})")
    sol = solve_mfg(
        cfg.game,
        cfg.grid,
        damping=s.damping,
        tol=s.tol,
        max_iter=s.max_iter,
        switching=s.switching,
        log_fn=print,
    )
    print("[2/3] Consistency check")
    rep = consistency_check(sol, seed=cfg.simulation.seed)
    run.extra.update(
        converged=sol.converged,
        iterations=sol.iterations,
        residual=sol.residual,
        consistency=asdict(rep),
    )
    print("[3/3] Writing results")
    every = cfg.output.snapshot_every
    run.save(sol.interference_frame(), "interference.csv")
    run.save(sol.value.to_frame(every), "value_policy.csv")
    run.save(sol.m.to_frame(every), "density.csv")
    run.save(sol.history, "convergence.csv")


def cmd_check(run: Run) -> None:
    results = run_suite(run.cfg, run.threads, log_fn=print)
    run.save(pd.DataFrame(results, columns=["name", "passed", "detail"]), "checks.csv")
    run.extra["failed_checks"] = [r.name for r in results if not r.passed]


COMMANDS: Dict[str, Callable[[Run], None]] = {
    "static-ne": cmd_static_ne,
    "simulate-channel": cmd_simulate_channel,
    "solve-single": cmd_solve_single,
    "off-probability": cmd_off_probability,
    "simulate-k": cmd_simulate_k,
    "solve-mfg": cmd_solve_mfg,
    "check": cmd_check,
    "utility-curve": cmd_utility_curve,
}


def build_argparser():
    p = argparse.ArgumentParser(
        description="powergame - energy-efficient power control games and mean-field solver"
    )
    p.add_argument("command", choices=list(COMMANDS), help="What to run")
    p.add_argument("--config", help="INI run configuration (defaults if omitted)")
    p.add_argument("--out", help="Output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="Run seed (overrides simulation.seed)")
    p.add_argument("--threads", type=int, default=1, help="Worker threads for Monte Carlo")
    p.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return p


def write_manifest(run: Run, seed: int, wall: float) -> None:
    text = dump_config(run.cfg)
    (run.out_dir / "config.ini").write_text(text, encoding="utf-8")
    manifest = {
        "config_sha256": text_digest(text),
        "seed": seed,
        "wall_time_s": wall,
        "files": run.files + ["config.ini"],
        "versions": {
            "powergame": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "results": run.extra,
    }
    (run.out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8"
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_argparser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    start = time.perf_counter()
    try:
        cfg = load_config(Path(args.config) if args.config else None)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed: must be >= 0, got {args.seed}")
            cfg = replace(cfg, simulation=replace(cfg.simulation, seed=args.seed))
        if args.out:
            cfg = replace(cfg, output=replace(cfg.output, dir=args.out))
        out_dir = Path(cfg.output.dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        print(f"Scenario: {cfg.name}")
        print(f"Command: {args.command}")
        print(f"Output: {out_dir}")
        run = Run(cfg, out_dir, max(args.threads, 1))
        COMMANDS[args.command](run)
        write_manifest(run, cfg.simulation.seed, time.perf_counter() - start)
        failed = run.extra.get("failed_checks")
        if failed:
            print("Error: failed checks:", ", ".join(failed))
            return EXIT_CHECK
        print("Done.")
        return EXIT_OK
    except ConfigError as e:
        print("Error:", e)
        return EXIT_CONFIG
    except (NumericalError, DomainError) as e:
        print("Error:", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
