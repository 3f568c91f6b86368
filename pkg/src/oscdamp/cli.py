"""Command-line front end: analyze / train / calibrate / evaluate / simulate.

Exit codes: 0 success, 1 config error, 2 numerical divergence, 3 I/O error.
"""

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from . import grid, modal
from .config import ConfigError, load_experiment
from .env import DampingEnv, evaluate_policy, settling_time
from .training import calibrate, load_checkpoint, make_env, train


def _load(args):
    exp = load_experiment(args.config)
    if args.seed is not None:
        exp = dataclasses.replace(exp, seed=args.seed)
    try:
        model, scenario = grid.load_model_file(exp.model_file)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {exp.model_file}") from exc
    except ValueError as exc:
        raise ConfigError(f"model file error: {exc}") from exc
    return exp, model, scenario


def cmd_analyze(args):
    exp, model, _ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    modes = modal.participation_factors(model.A)
    ng = model.n_g
    path = os.path.join(args.out, "modes.csv")
    with open(path, "w") as f:
        f.write("re,im,f,zeta," + ",".join(f"p_gen{i + 1}" for i in range(ng)) + "\n")
        for m in modes:
            gp = m.generator_participation(ng)
            f.write(f"{m.lam.real:.12g},{m.lam.imag:.12g},{m.freq:.12g},{m.damping:.12g},"
                    + ",".join(f"{v:.12g}" for v in gp) + "\n")
    reps = [i for i, m in enumerate(modes) if m.lam.imag > 1e-9]
    print(f"{len(reps)} oscillatory mode pair(s)")
    if reps:
        target = min(reps, key=lambda i: modes[i].lam.imag)
        count = len(model.controlled)
        chosen = modal.select_controlled_generators(modes, modes[target], count, ng)
        lam = modes[target].lam
        print(f"target inter-area mode: {lam.real:.4f} {lam.imag:+.4f}j "
              f"(f={modes[target].freq:.3f} rad/s, zeta={modes[target].damping:.4f})")
        print("selected generators:", "{" + ", ".join(str(i + 1) for i in chosen) + "}")
    print(f"wrote {path}")
    return 0


def cmd_train(args):
    exp, model, _ = _load(args)
    train(exp, model, args.out, resume=args.checkpoint)
    print(f"wrote {os.path.join(args.out, 'episodes.csv')}")
    print(f"wrote {os.path.join(args.out, 'checkpoint_final.npz')}")
    return 0


def cmd_calibrate(args):
    exp, model, _ = _load(args)
    if args.checkpoint is None:
        raise ConfigError("calibrate requires --checkpoint")
    agent, _, _ = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "calibration.csv")
    best, _ = calibrate(exp, model, agent.actor, path, threads=args.threads)
    print(f"best threshold: {best:.12g}")
    print(f"wrote {path}")
    return 0


def _write_trajectory(path, env, actor, seed):
    from .drl import actor_forward

    obs = env.reset(seed)
    states = [env._deviation(env._x).copy()]
    scs = [False]
    while not env.done:
        a = np.zeros(env.act_dim) if actor is None else actor_forward(actor, obs)
        res = env.step(a)
        obs = res.observation
        states.extend(res.diagnostics["states"])
        scs.extend(res.diagnostics["scs_on"])
    ng = env.model.n_g
    snaps = [grid.SystemState.from_vector(x, ng) for x in states]
    grid.trajectory_to_csv(snaps, env.model.dt, path, scs_flags=scs)


def cmd_evaluate(args):
    exp, model, scenario = _load(args)
    if args.checkpoint is None:
        raise ConfigError("evaluate requires --checkpoint")
    agent, _, _ = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    ev = exp.evaluation
    if ev.episode_steps:
        exp = dataclasses.replace(
            exp, env=dataclasses.replace(exp.env, episode_steps=ev.episode_steps))
    environments = ["linear"] + (["nonlinear"] if ev.nonlinear else [])
    if "nonlinear" in environments and scenario is None:
        raise ConfigError("nonlinear evaluation requires a [fault] section in the model file")

    cells = [(ctl, envname, delay)
             for ctl in ("pss", "drl_scs")
             for envname in environments
             for delay in ev.delays]

    def run_cell(cell):
        ctl, envname, delay = cell
        env = make_env(exp, model, scenario=scenario if envname == "nonlinear" else None,
                       delay=delay, nonlinear=envname == "nonlinear")
        actor = agent.actor if ctl == "drl_scs" else None
        seeds = [cfgmod.derived_seed(exp.seed, "evaluate", i) for i in range(ev.episodes)]
        reports = evaluate_policy(env, actor, ev.episodes, seeds=seeds)
        traj_env = make_env(exp, model, scenario=scenario if envname == "nonlinear" else None,
                            delay=delay, nonlinear=envname == "nonlinear")
        name = f"traj_{ctl}_{envname}_delay{int(round(delay * 1000))}ms.csv"
        _write_trajectory(os.path.join(args.out, name),
                          traj_env, actor, cfgmod.derived_seed(exp.seed, "evaluate", 0))
        return cell, reports

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    results.sort(key=lambda cr: cr[0])
    path = os.path.join(args.out, "summary.csv")
    with open(path, "w") as f:
        f.write("controller,environment,delay,P_bar,settling_time,peak_omega,unstable\n")
        for (ctl, envname, delay), reports in results:
            pbar = np.mean([r["P_bar"] for r in reports])
            st = np.mean([r["settling_time"] for r in reports])
            peak = np.mean([r["peak_omega"] for r in reports])
            uns = sum(r["unstable"] for r in reports)
            f.write(f"{ctl},{envname},{delay:.12g},{pbar:.12g},{st:.12g},{peak:.12g},{uns}\n")
    print(f"wrote {path}")
    return 0


def cmd_simulate(args):
    exp, model, scenario = _load(args)
    os.makedirs(args.out, exist_ok=True)
    actor = None
    if args.checkpoint is not None:
        agent, _, _ = load_checkpoint(args.checkpoint)
        actor = agent.actor
    nonlinear = scenario is not None
    env = make_env(exp, model, scenario=scenario, nonlinear=nonlinear)
    path = os.path.join(args.out, "trajectory.csv")
    _write_trajectory(path, env, actor, cfgmod.derived_seed(exp.seed, "simulate", 0))
    print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="oscdamp",
        description="Inter-area oscillation damping: simulation, modal analysis, "
                    "DDPG training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("analyze", cmd_analyze), ("train", cmd_train),
                     ("calibrate", cmd_calibrate), ("evaluate", cmd_evaluate),
                     ("simulate", cmd_simulate)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except grid.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        if "divergence" in msg or "stationary" in msg:
            return 2
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
