"""DDPG training loop, checkpointing, and the threshold calibration sweep."""

import json
import os

import numpy as np

from . import config as cfgmod
from .drl import DDPGAgent, MLP, Layer, ReplayBuffer, Transition, ddpg_update, explore
from .env import DampingEnv, evaluate_policy


# ---------------------------------------------------------------------------
# checkpoints

def _net_arrays(prefix, net, out):
    for i, layer in enumerate(net.layers):
        out[f"{prefix}_W{i}"] = layer.W
        out[f"{prefix}_b{i}"] = layer.b


def _net_from_arrays(prefix, acts, data):
    layers = []
    for i, act in enumerate(acts):
        layers.append(Layer(data[f"{prefix}_W{i}"].copy(), data[f"{prefix}_b{i}"].copy(), act))
    return MLP(layers)


def _opt_arrays(prefix, opt, out):
    if hasattr(opt, "m"):
        out[f"{prefix}_t"] = np.array(opt.t)
        for k in sorted(opt.m):
            out[f"{prefix}_m{k}"] = opt.m[k]
            out[f"{prefix}_v{k}"] = opt.v[k]


def _opt_restore(prefix, opt, data):
    if hasattr(opt, "m") and f"{prefix}_t" in data:
        opt.t = int(data[f"{prefix}_t"])
        k = 0
        while f"{prefix}_m{k}" in data:
            opt.m[k] = data[f"{prefix}_m{k}"].copy()
            opt.v[k] = data[f"{prefix}_v{k}"].copy()
            k += 1


def save_checkpoint(path, agent, buffer=None, episode=0):
    """Self-describing npz container: all four networks, optimizer and replay
    state, and the training position.  Round-trips bit-exactly."""
    arrays = {}
    _net_arrays("actor", agent.actor, arrays)
    _net_arrays("critic", agent.critic, arrays)
    _net_arrays("target_actor", agent.target_actor, arrays)
    _net_arrays("target_critic", agent.target_critic, arrays)
    _opt_arrays("actor_opt", agent.actor_opt, arrays)
    _opt_arrays("critic_opt", agent.critic_opt, arrays)
    meta = {
        "episode": episode,
        "agent": {"obs_dim": agent.config.obs_dim, "act_dim": agent.config.act_dim,
                  "hidden": agent.config.hidden, "gamma": agent.config.gamma,
                  "tau": agent.config.tau, "actor_lr": agent.config.actor_lr,
                  "critic_lr": agent.config.critic_lr,
                  "optimizer": agent.config.optimizer},
        "actor_acts": [l.act for l in agent.actor.layers],
        "critic_acts": [l.act for l in agent.critic.layers],
    }
    if buffer is not None:
        meta["buffer"] = {"capacity": buffer.capacity, "alpha": buffer.alpha,
                          "beta": buffer.beta, "eps": buffer.eps,
                          "pos": buffer.pos, "size": len(buffer)}
        if len(buffer):
            arrays["buf_s"] = np.stack([t.s for t in buffer.data])
            arrays["buf_a"] = np.stack([t.a for t in buffer.data])
            arrays["buf_r"] = np.array([t.r for t in buffer.data])
            arrays["buf_s2"] = np.stack([t.s_next for t in buffer.data])
            arrays["buf_done"] = np.array([t.done for t in buffer.data])
            arrays["buf_prio"] = buffer.priorities[:len(buffer)].copy()
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """-> (agent, buffer or None, episode)."""
    from .drl import AgentConfig

    data = np.load(path)
    meta = json.loads(bytes(data["meta_json"]).decode())
    agent = DDPGAgent(AgentConfig(**meta["agent"]), np.random.default_rng(0))
    agent.actor = _net_from_arrays("actor", meta["actor_acts"], data)
    agent.critic = _net_from_arrays("critic", meta["critic_acts"], data)
    agent.target_actor = _net_from_arrays("target_actor", meta["actor_acts"], data)
    agent.target_critic = _net_from_arrays("target_critic", meta["critic_acts"], data)
    _opt_restore("actor_opt", agent.actor_opt, data)
    _opt_restore("critic_opt", agent.critic_opt, data)
    buffer = None
    if "buffer" in meta:
        b = meta["buffer"]
        buffer = ReplayBuffer(b["capacity"], b["alpha"], b["beta"], b["eps"])
        for i in range(b["size"]):
            buffer.data.append(Transition(
                data["buf_s"][i], data["buf_a"][i], float(data["buf_r"][i]),
                data["buf_s2"][i], bool(data["buf_done"][i]), float(data["buf_prio"][i])))
        if b["size"]:
            buffer.priorities[:b["size"]] = data["buf_prio"]
        buffer.pos = b["pos"]
    return agent, buffer, meta["episode"]


# ---------------------------------------------------------------------------
# training

def make_env(exp, model, scenario=None, delay=0.0, nonlinear=False):
    pss = [exp.pss] * model.n_g
    scs = cfgmod.SCSConfig(exp.scs.threshold, exp.scs.kappa1, exp.scs.kappa2,
                           exp.scs.kappa3, model.reference)
    return DampingEnv(model, exp.env, scs, pss, delay=delay,
                      nonlinear=nonlinear, scenario=scenario)


def _schedule(start, end, ep, total):
    if total <= 1:
        return start
    frac = min(ep / (total - 1), 1.0)
    return start + (end - start) * frac


def train(exp, model, out_dir, resume=None, log_name="episodes.csv"):
    """Run the DDPG loop; deterministic given the master seed.

    Writes the per-episode log and periodic checkpoints to out_dir; returns
    the trained agent.  `resume` is a checkpoint path to continue from.
    """
    os.makedirs(out_dir, exist_ok=True)
    tr = exp.train
    env = make_env(exp, model)
    if resume is not None:
        agent, buffer, start_ep = load_checkpoint(resume)
    else:
        agent = DDPGAgent(exp.agent_config(env.m, env.act_dim),
                          cfgmod.derived_rng(exp.seed, "init"))
        buffer = ReplayBuffer(tr.buffer_capacity, tr.per_alpha, tr.per_beta_start, tr.per_eps)
        start_ep = 0

    log_path = os.path.join(out_dir, log_name)
    diverged = False
    next_ep = start_ep
    with open(log_path, "w") as log:
        log.write("episode,steps,return,mean_reward,terminated_unstable\n")
        for ep in range(start_ep, tr.max_episodes):
            noise_std = _schedule(tr.noise_start, tr.noise_end, ep, tr.max_episodes)
            buffer.beta = _schedule(tr.per_beta_start, tr.per_beta_end, ep, tr.max_episodes)
            explore_rng = cfgmod.derived_rng(exp.seed, "explore", ep)
            sample_rng = cfgmod.derived_rng(exp.seed, "sample", ep)
            obs = env.reset(cfgmod.derived_seed(exp.seed, "episode", ep))
            ep_return = 0.0
            steps = 0
            unstable = False
            try:
                while not env.done:
                    a = explore(agent.act(obs), noise_std, explore_rng)
                    res = env.step(a)
                    done_flag = bool(res.done and res.diagnostics["unstable"])
                    buffer.add(Transition(obs, a, res.reward, res.observation, done_flag))
                    obs = res.observation
                    ep_return += res.reward
                    steps += 1
                    unstable = unstable or done_flag
                    if len(buffer) >= tr.batch_size:
                        batch, idx, w = buffer.sample(tr.batch_size, sample_rng)
                        _, prios = ddpg_update(agent, batch, w)
                        buffer.update_priorities(idx, prios)
                        agent.soft_update_targets()
            except RuntimeError as exc:
                if "training divergence" not in str(exc):
                    raise
                diverged = True
            mean_r = ep_return / steps if steps else 0.0
            log.write(f"{ep},{steps},{ep_return:.12g},{mean_r:.12g},{int(unstable)}\n")
            next_ep = ep + 1
            if diverged:
                break
            if tr.checkpoint_every and next_ep % tr.checkpoint_every == 0:
                save_checkpoint(os.path.join(out_dir, f"checkpoint_{next_ep:06d}.npz"),
                                agent, buffer, next_ep)
    if diverged:
        # keep the last periodic checkpoint as the last good state
        raise RuntimeError("training divergence")
    save_checkpoint(os.path.join(out_dir, "checkpoint_final.npz"), agent, buffer, next_ep)
    return agent


# ---------------------------------------------------------------------------
# threshold calibration

def calibrate(exp, model, actor, out_path, threads=1):
    """Sweep the switching threshold; 20 rotated-phase mode-aligned initial
    states per point; global max-min normalization of the cumulative energy.

    Returns (best threshold, mean normalized P_bar per threshold).
    """
    thresholds = list(exp.calibration.thresholds)
    trials = exp.calibration.trials

    def run_point(thr):
        scs = cfgmod.SCSConfig(thr, exp.scs.kappa1, exp.scs.kappa2,
                               exp.scs.kappa3, model.reference)
        env = DampingEnv(model, exp.env, scs, [exp.pss] * model.n_g)
        seeds = [cfgmod.derived_seed(exp.seed, "calibrate", t) for t in range(trials)]
        reports = evaluate_policy(env, actor, trials, seeds=seeds)
        return [r["P_bar"] for r in reports]

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_point, thresholds))
    else:
        rows = [run_point(thr) for thr in thresholds]
    raw = np.array(rows)
    lo, hi = raw.min(), raw.max()
    if hi - lo == 0.0:
        norm = np.zeros_like(raw)
    else:
        norm = (raw - lo) / (hi - lo)
    means = norm.mean(axis=1)
    best = thresholds[int(np.argmin(means))]
    with open(out_path, "w") as f:
        f.write("# normalization: global max-min across the whole sweep\n")
        f.write("threshold," + ",".join(f"trial_{t}" for t in range(trials)) + ",mean\n")
        for j, thr in enumerate(thresholds):
            row = ",".join(f"{v:.12g}" for v in norm[j])
            f.write(f"{thr:.12g},{row},{means[j]:.12g}\n")
    return best, means
