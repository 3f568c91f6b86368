"""Local PSS, wide-area feedback, switching rule, energy function, delay line."""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PSSParams:
    """Washout + double lead-lag stabilizer parameters for one generator."""

    gain: float = -0.5
    t_washout: float = 10.0
    t_lead1: float = 0.05
    t_lag1: float = 0.02
    t_lead2: float = 3.0
    t_lag2: float = 5.4

    def __post_init__(self):
        for name in ("t_washout", "t_lead1", "t_lag1", "t_lead2", "t_lag2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class PSSFilter:
    """Discrete k * (Tw s)/(1+Tw s) * (1+Tn1 s)/(1+Td1 s) * (1+Tn2 s)/(1+Td2 s).

    Each first-order section is discretized by the bilinear transform and kept
    in direct-form-II with one state, initialized at the zero-input steady
    state (all zeros).
    """

    def __init__(self, params, dt):
        self.params = params
        self.dt = dt
        c = 2.0 / dt
        # sections as (b0, b1, a1) for H(z) = (b0 + b1 z^-1)/(1 + a1 z^-1)
        self.sections = []
        tw = params.t_washout
        a0 = 1.0 + c * tw
        self.sections.append((c * tw / a0, -c * tw / a0, (1.0 - c * tw) / a0))
        for tn, td in ((params.t_lead1, params.t_lag1), (params.t_lead2, params.t_lag2)):
            a0 = 1.0 + c * td
            self.sections.append(((1.0 + c * tn) / a0, (1.0 - c * tn) / a0, (1.0 - c * td) / a0))
        self.reset()

    def reset(self):
        self.state = [0.0, 0.0, 0.0]

    def step(self, sample):
        y = self.params.gain * sample
        for i, (b0, b1, a1) in enumerate(self.sections):
            w = y - a1 * self.state[i]
            y = b0 * w + b1 * self.state[i]
            self.state[i] = w
        return y


class PSSBank:
    """One PSS per controlled generator, fed that generator's own omega."""

    def __init__(self, params_list, dt):
        self.filters = [PSSFilter(p, dt) for p in params_list]

    def reset(self):
        for f in self.filters:
            f.reset()

    def step(self, omegas):
        return np.array([f.step(w) for f, w in zip(self.filters, omegas)])


@dataclass(frozen=True)
class GainAction:
    """Wide-area feedback gain with entries confined to [-k_max, k_max]."""

    K: np.ndarray
    k_max: float

    def __post_init__(self):
        if np.any(np.abs(self.K) > self.k_max + 1e-12):
            raise ValueError("gain entries exceed the bound")


@dataclass(frozen=True)
class SCSConfig:
    """Switching rule threshold and energy-function weights."""

    threshold: float = 0.06
    kappa1: float = 1.0
    kappa2: float = 1.0
    kappa3: float = 1.0
    reference: int = 0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.kappa1 == 0 and self.kappa2 == 0 and self.kappa3 == 0:
            raise ValueError("at least one energy weight must be nonzero")


def wide_area_output(K, observation):
    """u_wac = -K * observation."""
    K = np.atleast_2d(K)
    observation = np.asarray(observation, dtype=float)
    if K.shape[1] != observation.shape[0]:
        raise ValueError("gain shape mismatch")
    return -K @ observation


def energy(state, config):
    """Energy-like performance measure P(t) >= 0.

    Pairwise frequency spread over all ordered generator pairs, plus kinetic
    and potential terms over the non-reference generators.
    """
    w = np.asarray(state.omega, dtype=float)
    th = np.asarray(state.theta, dtype=float)
    ref = config.reference
    pair = np.sum((w[:, None] - w[None, :]) ** 2)
    others = np.arange(len(w)) != ref
    kinetic = np.sum(w[others] ** 2)
    potential = np.sum((th[others] - th[ref]) ** 2)
    return config.kappa1 * pair + config.kappa2 * kinetic + config.kappa3 * potential


def scs_combine(u_loc, u_wac, P, threshold):
    """Eq-style switching: wide-area signal added only while P exceeds the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if P > threshold:
        return u_loc + u_wac, True
    return u_loc, False


class DelayLine:
    """Fixed-delay FIFO for observation vectors: emits the sample from
    ceil(delay/dt) steps in the past; before warm-up, the oldest available."""

    def __init__(self, delay, dt):
        if delay < 0:
            raise ValueError("invalid delay")
        # tiny slack so delays that are exact multiples of dt are not pushed
        # to the next step by floating-point noise (e.g. 0.08 / 0.01)
        self.steps = max(math.ceil(delay / dt - 1e-9), 0)
        self.queue = deque(maxlen=self.steps + 1)

    def reset(self):
        self.queue.clear()

    def push(self, observation):
        self.queue.append(np.asarray(observation, dtype=float).copy())
        return self.queue[0]
