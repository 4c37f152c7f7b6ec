"""Experiment orchestrator.

Subcommands reproduce every figure-class result as CSVs:

  validate        hydro + towed-sphere solver checks (exit 1 on failure)
  sherwood        Sherwood number vs Peclet for the swimming gait
  transient       transient flux histories J(t)/J0
  generate        random-policy experience logs from the coupled solver
  learn           Q-learning sweeps over recorded logs
  fit-surrogate   fit the affine reward model from logs
  surrogate-learn Q-learning sweeps on the surrogate environment

Every command is a pure function of (config, seed, input files): reruns
produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import hydro, rl, surrogate
from . import transport as tr
from .config import ConfigError, RunConfig
from .kinematics import SwimmerGeometry, gait_action
from .rl import fmt


def _write_rows(path: Path, header: str, rows, comment: str):
    with open(path, "w", newline="") as f:
        f.write(f"# {comment}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def _validate_rows(cfg: RunConfig):
    geo = cfg.geometry()
    v = cfg.tree["validate"]
    rows = []

    def add(name, pe, value, reference, tol):
        err = abs(value - reference) / max(abs(reference), 1e-300)
        rows.append((name, pe, value, reference, err, tol, err <= tol))

    # (a) gait displacement: scallop, speed invariance, Richardson order
    from .kinematics import posture_of_state, transition

    p0 = posture_of_state(4, 0.0, geo)
    p1, _, _ = hydro.integrate_action(p0, 4, 1, geo, 200)
    p2, _, _ = hydro.integrate_action(p1, transition(4, 1), 1, geo, 200)
    rows.append(("scallop_residual", 0.0, abs(p2.X), 0.0,
                 abs(p2.X) / geo.R, v["scallop_tol"], abs(p2.X) <= v["scallop_tol"] * geo.R))
    fast_geo = SwimmerGeometry(R=geo.R, W=geo.W, w=geo.w, S=2.0 * geo.S, mu=geo.mu)
    add("speed_invariance", 0.0, hydro.gait_displacement(fast_geo, 100),
        hydro.gait_displacement(geo, 100), 1e-12)
    d1 = hydro.gait_displacement(geo, 50)
    d2 = hydro.gait_displacement(geo, 100)
    d3 = hydro.gait_displacement(geo, 200)
    add("richardson_ratio", 0.0, (d2 - d1) / (d3 - d2), 4.0, 0.2)

    # (b) towed-sphere Sherwood versus the Clift correlation
    for pe in v["pe"]:
        tcfg = cfg.validation_transport(pe)
        sh, _, _ = tr.towed_sherwood(pe, geo, tcfg)
        add("towed_sherwood", pe, sh, tr.clift_sherwood(pe), v["sherwood_tol"])
    # zero-velocity limit: pure diffusion marched against the steady solve
    tcfg = cfg.validation_transport(1.0)
    sh0 = _zero_speed_sherwood(geo, tcfg)
    add("towed_sherwood_pe0", 0.0, sh0, 1.0, v["diffusive_tol"])
    return rows


def _zero_speed_sherwood(geo, tcfg):
    grid = tr.Grid(x0=-0.5 * tcfg.window_x, dx=tcfg.dx, drho=tcfg.drho,
                   nx=tcfg.nx, nrho=tcfg.nrho)
    mask = tr.build_mask(grid, [0.0], tr.mask_radius(geo, grid, tcfg))
    from .capacitance import absorbing_charges

    charges = absorbing_charges(np.array([0.0]), geo.R, tcfg.c_inf)
    bc_fn = lambda x, rho: charges.concentration(x, rho)
    steady = tr.ImplicitStepper(grid, geo, tcfg, steady=True)
    c0, j0 = steady.step(np.zeros((tcfg.nx, tcfg.nrho)), mask,
                         steady.coeff.boundary_rhs(bc_fn))
    stepper = tr.ImplicitStepper(grid, geo, tcfg)
    bc_rhs = stepper.coeff.boundary_rhs(bc_fn)
    c, j = c0, j0
    for _ in range(50):
        c, j = stepper.step(c, mask, bc_rhs)
    return j / j0


def cmd_validate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    rows = _validate_rows(cfg)
    _write_rows(
        out / "validation.csv",
        "name,pe,value,reference,rel_err,tol,passed",
        [
            (n, fmt(pe), fmt(val), fmt(ref), fmt(err), fmt(tol), str(int(ok)))
            for n, pe, val, ref, err, tol, ok in rows
        ],
        cfg.header_comment(),
    )
    failed = [r for r in rows if not r[-1]]
    for n, pe, val, ref, err, tol, ok in rows:
        status = "ok  " if ok else "FAIL"
        print(f"[{status}] {n:22s} pe={pe:<8g} value={val:.6g} ref={ref:.6g} "
              f"err={err:.2%} tol={tol:.2%}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# sherwood / transient
# ---------------------------------------------------------------------------


def gait_run_until_periodic(geometry, config, max_periods, tol, chunk_gaits=6):
    """Run the gait, extending in chunks until the period-averaged flux
    settles (three consecutive period pairs within tol) or max_periods."""
    period = 4.0
    result = None
    policy = lambda s, rng: gait_action(s)
    done_periods = 0
    while done_periods < max_periods:
        n_new = min(chunk_gaits, max_periods - done_periods)
        result = tr.run_coupled(
            geometry, policy, config, n_actions=4 * n_new, initial=result
        )
        done_periods += n_new
        if done_periods >= 3:
            _, means = tr.period_average_series(result.records, period)
            if len(means) >= 4:
                d = np.abs(np.diff(means[-4:]))
                scale = np.maximum(np.abs(means[-3:]), 1e-300)
                if np.all(d <= tol * scale):
                    break
    jbar, flag = tr.period_average_flux(result.records, period, tol)
    return result, jbar, flag


def _sherwood_one(args):
    cfg, pe, w_over_r = args
    geo0 = cfg.geometry()
    geo = SwimmerGeometry(R=geo0.R, W=geo0.W, w=w_over_r * geo0.R, S=geo0.S,
                          mu=geo0.mu)
    t = cfg.tree["transport"]
    tcfg = replace(cfg.transport(pe), dt=t["dt_over_stroke"] * geo.stroke_time)
    result, jbar, flag = gait_run_until_periodic(
        geo, tcfg, t["max_periods"], t["periodic_tol"]
    )
    return pe, w_over_r, result.j0, jbar, jbar / result.j0, flag


def cmd_sherwood(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    t = cfg.tree["transport"]
    tasks = [(cfg, pe, wr) for pe in t["pe"] for wr in t["sherwood_w_over_R"]]
    results = _pmap(_sherwood_one, tasks, jobs)
    _write_rows(
        out / "sherwood.csv",
        "pe,wR,J0,Jbar,Sh,periodic_flag",
        [
            (fmt(pe), fmt(wr), fmt(j0), fmt(jbar), fmt(sh), str(int(flag)))
            for pe, wr, j0, jbar, sh, flag in results
        ],
        cfg.header_comment(),
    )
    for pe, wr, j0, jbar, sh, flag in results:
        print(f"pe={pe:<8g} w/R={wr:<4g} J0={j0:.5g} Jbar={jbar:.5g} "
              f"Sh={sh:.4f} periodic={flag}")
    return 0


def _transient_one(args):
    cfg, pe = args
    geo = cfg.geometry()
    tcfg = cfg.transport(pe)
    horizon = cfg.tree["transport"]["transient_horizon"]
    n_actions = int(round(horizon))
    result = tr.run_coupled(geo, lambda s, rng: gait_action(s), tcfg, n_actions)
    return pe, result


def cmd_transient(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    tasks = [(cfg, pe) for pe in cfg.tree["transport"]["pe"]]
    results = _pmap(_transient_one, tasks, jobs)
    comment = cfg.header_comment()
    series_rows = []
    avg_rows = []
    for pe, result in results:
        _write_rows(
            out / f"flux_pe{pe:g}.csv",
            "t,s,a,X,J",
            [
                (fmt(r.t), str(r.s), str(r.a), fmt(r.X), fmt(r.J))
                for r in result.records
            ],
            comment,
        )
        for r in result.records:
            series_rows.append((fmt(pe), fmt(r.t), fmt(r.J / result.j0)))
        ends, means = tr.period_average_series(result.records, 4.0)
        for t_end, m in zip(ends, means):
            avg_rows.append((fmt(pe), fmt(t_end), fmt(m / result.j0)))
    _write_rows(out / "transient.csv", "pe,t,J_over_J0", series_rows, comment)
    _write_rows(out / "transient_averaged.csv", "pe,t,Jbar_over_J0",
                avg_rows, comment)
    return 0


# ---------------------------------------------------------------------------
# generate / learn / surrogate
# ---------------------------------------------------------------------------


def _generate_one(args):
    cfg, pe, seed = args
    geo = cfg.geometry()
    tcfg = cfg.generation_transport(pe)
    n_actions = cfg.n_actions_for(pe)
    s0 = cfg.tree["generate"]["s0"]
    rng = np.random.default_rng(seed)
    policy = lambda s, r: int(r.integers(1, 3))
    result = tr.run_coupled(geo, policy, tcfg, n_actions, s0=s0, rng=rng)
    return pe, seed, [rl.Experience.from_record(a) for a in result.actions]


def cmd_generate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    if cfg.tree["transport"]["g_R_over_c_inf"] <= 0:
        raise ConfigError("generate requires a positive background gradient")
    tasks = [
        (cfg, pe, cfg.seed + 1000 * i)
        for i, pe in enumerate(cfg.tree["transport"]["pe"])
    ]
    results = _pmap(_generate_one, tasks, jobs)
    for pe, seed, exps in results:
        path = out / f"experience_pe{pe:g}.csv"
        rl.write_experience_csv(
            path, exps, f"{cfg.header_comment()} pe={pe:g} gen_seed={seed}"
        )
        print(f"wrote {path} ({len(exps)} experiences)")
    return 0


def _log_paths(cfg: RunConfig, out: Path):
    paths = []
    for pe in cfg.tree["transport"]["pe"]:
        path = out / f"experience_pe{pe:g}.csv"
        if not path.exists():
            raise FileNotFoundError(
                f"missing experience log {path}; run the generate command first"
            )
        paths.append((pe, path))
    return paths


def _batches_for(cfg: RunConfig, experiences):
    r = cfg.tree["rl"]
    b = r["batch_size"]
    total = len(experiences)
    if total % b == 0:
        return rl.make_batches(experiences, b, total // b)
    return rl.make_batches(experiences, b, r["n_batches_overlapping"])


def _sweep_all_channels(cfg: RunConfig, batches):
    r = cfg.tree["rl"]
    return [
        rl.sweep(batches, r["gamma_grid"], r["alpha_grid"], ch, r["tie_epsilon"])
        for ch in rl.REWARD_CHANNELS
    ]


def cmd_learn(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    comment = cfg.header_comment()
    box_rows = []
    for pe, path in _log_paths(cfg, out):
        exps = rl.read_experience_csv(path)
        batches = _batches_for(cfg, exps)
        results = _sweep_all_channels(cfg, batches)
        rl.write_heatmap_csv(
            out / f"heatmap_pe{pe:g}.csv", results, len(batches),
            f"{comment} pe={pe:g}",
        )
        for res in results:
            for bi, total in enumerate(res.batch_totals):
                box_rows.append((res.channel, fmt(pe), str(bi), fmt(total)))
            print(f"pe={pe:<8g} {res.channel}: total success "
                  f"{res.total_success:.3f}")
    _write_rows(out / "boxplot.csv", rl.BOXPLOT_HEADER, box_rows, comment)
    return 0


def cmd_fit_surrogate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    for pe, path in _log_paths(cfg, out):
        exps = rl.read_experience_csv(path)
        model = surrogate.fit_affine(exps, pe=pe)
        model.validate(mirror_tol=1e-5)
        target = out / f"surrogate_pe{pe:g}.txt"
        surrogate.save_model(target, model)
        print(f"wrote {target}")
    return 0


def cmd_surrogate_learn(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    r = cfg.tree["rl"]
    comment = cfg.header_comment()
    model_path = out / "surrogate_pe0.06.txt"
    if model_path.exists():
        model = surrogate.load_model(model_path)
    else:
        model = surrogate.default_model()
    n = r["surrogate_n_actions"]

    def sweep_model(m, seed):
        env = surrogate.SurrogateEnvironment(m, s0=cfg.tree["generate"]["s0"])
        log = rl.rollout_random(env, n, seed)
        return _sweep_all_channels(cfg, _batches_for(cfg, log))

    results = sweep_model(model, cfg.seed)
    box_rows = []
    n_batches = len(results[0].batch_totals)
    rl.write_heatmap_csv(out / "surrogate_heatmap.csv", results, n_batches, comment)
    for res in results:
        for bi, total in enumerate(res.batch_totals):
            box_rows.append((res.channel, fmt(model.pe), str(bi), fmt(total)))
        print(f"surrogate {res.channel}: total success {res.total_success:.3f}")
    _write_rows(out / "surrogate_boxplot.csv", rl.BOXPLOT_HEADER, box_rows, comment)

    ladder_rows = []
    for factor in r["eta_ladder"]:
        scaled = model.scaled_noise(factor)
        for res in sweep_model(scaled, cfg.seed):
            if res.channel == "disp":
                continue
            ladder_rows.append(
                (res.channel, fmt(factor), fmt(res.total_success))
            )
            print(f"eta x{factor:g} {res.channel}: total {res.total_success:.3f}")
    _write_rows(out / "surrogate_noise_ladder.csv",
                "reward,eta_factor,total_success", ladder_rows, comment)
    return 0


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


def _pmap(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


COMMANDS = {
    "validate": cmd_validate,
    "sherwood": cmd_sherwood,
    "transient": cmd_transient,
    "generate": cmd_generate,
    "learn": cmd_learn,
    "fit-surrogate": cmd_fit_surrogate,
    "surrogate-learn": cmd_surrogate_learn,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trisphere",
        description="Three-sphere swimmer experiments: hydrodynamics, solute "
        "uptake, and Q-learning sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="YAML config (defaults used when omitted)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory")
        p.add_argument("--fast", action="store_true",
                       help="reduced-resolution CI profile")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, fast=args.fast)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, args.out, jobs=args.jobs)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
