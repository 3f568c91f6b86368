"""Episodic MDP wrapper: perturbed resets, action-repeat windows, the
eigenvalue-shaping reward, the stability penalty, and policy evaluation."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import control, grid, modal
from .drl import actor_forward


@dataclass(frozen=True)
class EnvConfig:
    episode_steps: int = 500
    window: int = 40              # substeps per decision, also the DMD window
    alpha: float = 1.0
    beta: float = 1.0
    penalty: float = -300.0
    noise_std: float = 0.01
    eig_source: str = "exact"     # or "dmd"
    init_scale: float = 0.1
    mode_aligned: bool = True
    reward_variant: str = "printed"   # or "shifted"
    k_max: float = 10.0
    omega_limit: float = 10.0     # rad/s divergence cutoff in dmd mode

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("reward weights must be nonnegative")
        if self.penalty >= 0:
            raise ValueError("penalty must be negative")
        if self.eig_source not in ("exact", "dmd"):
            raise ValueError("eig_source must be 'exact' or 'dmd'")
        if self.reward_variant not in ("printed", "shifted"):
            raise ValueError("reward_variant must be 'printed' or 'shifted'")


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    diagnostics: dict = field(default_factory=dict)


def spectrum_reward(closed, open_, alpha, beta, variant="printed"):
    """Eq-style eigenvalue shaping reward (negated objective).

    Matched conjugate pairs are counted once; unmatched closed-loop modes
    contribute their full terms with the open-loop reference zero.
    """
    pairing = modal.pair_spectra(closed, open_)
    J = 0.0
    for ci, oi in pairing.pairs:
        lc, lo = closed[ci], open_[oi]
        if variant == "printed":
            J += alpha * (lc.real ** 2 - lo.real ** 2)
        else:
            J += alpha * (lc.real - lo.real) ** 2
        J += beta * lc.imag ** 2
    for ci in pairing.unmatched_closed:
        lc = closed[ci]
        J += alpha * lc.real ** 2 + beta * lc.imag ** 2
    return -J, pairing


class DampingEnv:
    """One rollout environment around a GridModel.

    The actor's flattened gain is rescaled to K = k_max * action, held for
    `window` substeps; every substep runs the PSS bank, the energy function
    and the switching rule, with the wide-area path optionally delayed.
    """

    def __init__(self, model, config, scs, pss_params, delay=0.0,
                 nonlinear=False, scenario=None, target_mode=None):
        self.model = model
        self.config = config
        self.scs = scs
        self.pss = control.PSSBank([pss_params[i] for i in model.controlled], model.dt)
        self.delay = control.DelayLine(delay, model.dt)
        self.nonlinear = nonlinear
        self.scenario = scenario
        if nonlinear and scenario is None:
            raise ValueError("nonlinear mode requires a fault scenario")

        ng = model.n_g
        self.m = 2 * ng
        self.act_dim = model.p * self.m
        self.C = model.observation_matrix()[:, :self.m]   # x_rem is empty here
        self.open_eigs = grid.exact_eigenvalues(model, np.zeros((model.p, self.m)))
        self.Ad, Bd = grid.zoh_discretize(model.A, np.hstack([model.B1, model.B2]), model.dt)
        self.B1d, self.B2d = Bd[:, :model.p], Bd[:, model.p:]
        self.target_mode = self._pick_target_mode() if target_mode is None else target_mode
        self.done = True
        self.steps = 0
        self._x = None
        self.rng = None

    def closed_loop_spectrum(self, K):
        """Continuous-time spectrum of the sampled-data closed loop.

        Uses the exact ZOH propagator Ad - B1d K C so the exact and DMD
        eigenvalue sources describe the same system; the structural zero mode
        (uniform angle shift, mu = 1) is dropped, matching what DMD can see.
        """
        Acl = self.Ad - self.B1d @ (K @ self.C)
        mu = np.linalg.eigvals(Acl)
        mu = mu[np.abs(mu - 1.0) > 1e-9]
        return grid.sort_spectrum(np.log(mu) / self.model.dt)

    def _pick_target_mode(self):
        """Lowest-frequency oscillatory mode: the inter-area candidate."""
        reps = modal.oscillatory_representatives(self.open_eigs)
        if not reps:
            return None
        return min(reps, key=lambda i: self.open_eigs[i].imag)

    # -- state bookkeeping -------------------------------------------------

    def _deviation(self, x):
        """Deviation state (theta - theta*, omega) for observation and energy."""
        if not self.nonlinear:
            return x
        ng = self.model.n_g
        d = x.copy()
        d[:ng] -= self.model.theta_star
        return d

    def observation(self):
        return self.C @ self._deviation(self._x)

    def reset(self, seed):
        self.rng = np.random.default_rng(seed)
        n = self.model.n
        scale = self.config.init_scale
        if scale == 0.0:
            dev = np.zeros(n)
        elif self.config.mode_aligned and self.target_mode is not None:
            lams, vecs = np.linalg.eig(self.model.A)
            order = np.lexsort((-lams.imag, -lams.real))
            phi = vecs[:, order[self.target_mode]]
            # rotate the complex phase so distinct seeds start at distinct
            # points of the same mode's orbit
            v = np.real(np.exp(1j * self.rng.uniform(0.0, 2.0 * np.pi)) * phi)
            dev = scale * v / np.linalg.norm(v)
        else:
            dev = self.rng.normal(0.0, scale, n)
        if self.nonlinear:
            ng = self.model.n_g
            self._x = np.concatenate([self.model.theta_star, np.zeros(ng)]) + dev
        else:
            self._x = dev
        self.pss.reset()
        self.delay.reset()
        self.done = False
        self.steps = 0
        return self.observation()

    # -- one substep -------------------------------------------------------

    def _control_input(self, K):
        state = grid.SystemState.from_vector(self._deviation(self._x), self.model.n_g)
        obs = self.C @ state.as_vector()
        stale = self.delay.push(obs)
        u_wac = control.wide_area_output(K, stale)
        u_loc = self.pss.step(state.omega[self.model.controlled])
        P = control.energy(state, self.scs)
        u, flag = control.scs_combine(u_loc, u_wac, P, self.scs.threshold)
        return u, P, flag

    def _advance_linear(self, u):
        eta = (self.rng.normal(0.0, self.config.noise_std, self.model.q)
               if self.config.noise_std > 0 else np.zeros(self.model.q))
        self._x = self.Ad @ self._x + self.B1d @ u + self.B2d @ eta
        if not np.all(np.isfinite(self._x)):
            raise grid.DivergenceError(self.steps)

    def _advance_nonlinear(self, u, substep):
        t = (self.steps * self.config.window + substep) * self.model.dt
        G, B = self.scenario.network_at(t)
        u_full = np.zeros(self.model.n_g)
        u_full[self.model.controlled] = u
        self._x = grid.rk4_swing_step(self.model.machines, G, B, self._x, u_full, self.model.dt)
        if not np.all(np.isfinite(self._x)):
            raise grid.DivergenceError(self.steps)

    def step(self, action):
        if self.done:
            raise RuntimeError("episode finished")
        action = np.asarray(action, dtype=float).reshape(self.model.p, self.m)
        K = self.config.k_max * action

        obs_cols = [self.observation()]
        P_trace = []
        scs_trace = []
        state_trace = []
        unstable = False
        try:
            for sub in range(self.config.window):
                u, P, flag = self._control_input(K)
                P_trace.append(P)
                scs_trace.append(flag)
                if self.nonlinear:
                    self._advance_nonlinear(u, sub)
                else:
                    self._advance_linear(u)
                obs_cols.append(self.observation())
                state_trace.append(self._deviation(self._x).copy())
                ng = self.model.n_g
                if np.any(np.abs(self._deviation(self._x)[ng:2 * ng]) > self.config.omega_limit):
                    unstable = True
        except grid.DivergenceError:
            unstable = True

        spectrum = None
        pairing = None
        if unstable:
            reward = self.config.penalty
            self.done = True
        else:
            if self.config.eig_source == "exact":
                spectrum = self.closed_loop_spectrum(K)
                if spectrum.real.max() > 1e-6:
                    reward = self.config.penalty
                    self.done = True
                    unstable = True
                else:
                    reward, pairing = spectrum_reward(
                        spectrum, self.open_eigs, self.config.alpha,
                        self.config.beta, self.config.reward_variant)
            else:
                window = modal.SnapshotWindow(np.column_stack(obs_cols), self.model.dt)
                spectrum = modal.dmd_estimate(window)
                reward, pairing = spectrum_reward(
                    spectrum, self.open_eigs, self.config.alpha,
                    self.config.beta, self.config.reward_variant)

        self.steps += 1
        if self.steps >= self.config.episode_steps:
            self.done = True
        return StepResult(
            observation=self.observation(),
            reward=float(reward),
            done=self.done,
            diagnostics={
                "spectrum": spectrum,
                "pairing": pairing,
                "P": P_trace,
                "scs_on": scs_trace,
                "states": state_trace,
                "unstable": unstable,
                "omega": self._deviation(self._x)[self.model.n_g:2 * self.model.n_g].copy(),
            })


def settling_time(omega_trace, dt, fraction=1e-3):
    """First time after which max |omega| stays below fraction * peak; inf if never."""
    amps = np.array([np.max(np.abs(w)) for w in omega_trace])
    peak = amps.max()
    if peak == 0.0:
        return 0.0
    thr = fraction * peak
    above = np.nonzero(amps >= thr)[0]
    if above.size == 0:
        return 0.0
    last = above[-1]
    if last == len(amps) - 1:
        return math.inf
    return (last + 1) * dt


def evaluate_policy(env, actor, episodes, seeds=None):
    """Run evaluation episodes without exploration or learning.

    actor may be None for the PSS-only baseline (wide-area action forced to
    zero).  Returns one report dict per episode.
    """
    if seeds is None:
        seeds = list(range(episodes))
    reports = []
    for ep in range(episodes):
        obs = env.reset(seeds[ep])
        total_r = 0.0
        total_P = 0.0
        omegas = []
        steps = 0
        while not env.done:
            a = np.zeros(env.act_dim) if actor is None else actor_forward(actor, obs)
            res = env.step(a)
            obs = res.observation
            total_r += res.reward
            total_P += sum(res.diagnostics["P"])
            omegas.append(res.diagnostics["omega"])
            steps += 1
        reports.append({
            "seed": seeds[ep],
            "steps": steps,
            "return": total_r,
            "P_bar": total_P,
            "peak_omega": max((np.max(np.abs(w)) for w in omegas), default=0.0),
            "settling_time": settling_time(omegas, env.model.dt * env.config.window),
            "unstable": bool(steps and res.diagnostics["unstable"]),
        })
    return reports
