"""DDPG with hand-rolled numpy networks and proportional prioritized replay.

The actor is state -> tanh action, the critic is (state, action) -> scalar,
each with a single relu hidden layer.  Gradients are exact backpropagation,
checked against central finite differences in the test suite.
"""

from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# multilayer perceptron

_ACTS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: str


@dataclass
class MLP:
    layers: list

    @property
    def in_dim(self):
        return self.layers[0].W.shape[1]

    def parameters(self):
        for layer in self.layers:
            yield layer.W
            yield layer.b


def mlp_init(sizes, acts, rng, final_bound=None):
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization per layer.

    final_bound overrides the bound of the output layer; the usual DDPG
    recipe uses 3e-3 there so the initial policy and value are near zero.
    """
    if len(acts) != len(sizes) - 1:
        raise ValueError("one activation per layer required")
    layers = []
    for k, (d_in, d_out, act) in enumerate(zip(sizes[:-1], sizes[1:], acts)):
        if act not in _ACTS:
            raise ValueError(f"unknown activation {act!r}")
        bound = 1.0 / np.sqrt(d_in)
        if final_bound is not None and k == len(acts) - 1:
            bound = final_bound
        W = rng.uniform(-bound, bound, (d_out, d_in))
        b = rng.uniform(-bound, bound, d_out)
        layers.append(Layer(W, b, act))
    return MLP(layers)


def mlp_forward(mlp, x):
    """Forward pass; x is (batch, in_dim) or a single vector."""
    single = np.ndim(x) == 1
    h = np.atleast_2d(np.asarray(x, dtype=float))
    for layer in mlp.layers:
        z = h @ layer.W.T + layer.b
        h = _ACTS[layer.act][0](z)
    return h[0] if single else h


def _forward_cached(mlp, x):
    h = np.atleast_2d(np.asarray(x, dtype=float))
    caches = []
    for layer in mlp.layers:
        z = h @ layer.W.T + layer.b
        caches.append((h, z))
        h = _ACTS[layer.act][0](z)
    return h, caches


def _backward(mlp, caches, dout):
    """Backprop dL/dout through the net -> (per-layer (dW, db), dL/dinput)."""
    grads = [None] * len(mlp.layers)
    d = dout
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        h_in, z = caches[i]
        dz = d * _ACTS[layer.act][1](z)
        grads[i] = (dz.T @ h_in, dz.sum(axis=0))
        d = dz @ layer.W
    return grads, d


def actor_forward(actor, s):
    """Policy output: relu hidden layer(s), tanh output in (-1, 1)."""
    s = np.asarray(s, dtype=float)
    if (s.shape[-1] if s.ndim else 0) != actor.in_dim:
        raise ValueError("actor input shape mismatch")
    return mlp_forward(actor, s)


def critic_forward(critic, s, a):
    """Q-value of a state-action pair; no output activation."""
    single = np.ndim(s) == 1
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    x = np.hstack([s, a])
    if x.shape[1] != critic.in_dim:
        raise ValueError("critic input shape mismatch")
    q = mlp_forward(critic, x)[:, 0]
    return float(q[0]) if single else q


def soft_update(net, target, tau):
    """Target tracking: theta' <- tau * theta + (1 - tau) * theta'."""
    for layer, tgt in zip(net.layers, target.layers):
        if layer.W.shape != tgt.W.shape:
            raise ValueError("network shape mismatch")
        tgt.W *= 1.0 - tau
        tgt.W += tau * layer.W
        tgt.b *= 1.0 - tau
        tgt.b += tau * layer.b


def clone_mlp(mlp):
    return MLP([Layer(l.W.copy(), l.b.copy(), l.act) for l in mlp.layers])


def explore(a, noise_std, rng):
    """Gaussian action noise, clipped back into [-1, 1]."""
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if noise_std == 0:
        return np.asarray(a, dtype=float)
    return np.clip(np.asarray(a, dtype=float) + rng.normal(0.0, noise_std, np.shape(a)), -1.0, 1.0)


# ---------------------------------------------------------------------------
# replay buffer with proportional prioritization

@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool
    priority: float = 1.0


class ReplayBuffer:
    """Ring buffer; sampling probability proportional to (priority + eps)^alpha."""

    def __init__(self, capacity, alpha=0.6, beta=0.4, eps=1e-3):
        self.capacity = capacity
        self.alpha = alpha
        self.beta = beta
        self.eps = eps
        self.data = []
        self.priorities = np.zeros(capacity)
        self.pos = 0

    def __len__(self):
        return len(self.data)

    def add(self, transition):
        prio = transition.priority
        if self.data:
            prio = max(prio, self.priorities[:len(self.data)].max())
        if len(self.data) < self.capacity:
            self.data.append(transition)
            self.priorities[len(self.data) - 1] = prio
        else:
            self.data[self.pos] = transition
            self.priorities[self.pos] = prio
            self.pos = (self.pos + 1) % self.capacity

    def _probabilities(self):
        scaled = (self.priorities[:len(self.data)] + self.eps) ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size, rng):
        """Draw a prioritized minibatch -> (transitions, indices, weights)."""
        if len(self.data) == 0:
            raise ValueError("empty buffer")
        if len(self.data) < batch_size:
            raise ValueError("buffer smaller than batch size")
        probs = self._probabilities()
        idx = rng.choice(len(self.data), size=batch_size, replace=True, p=probs)
        weights = (len(self.data) * probs[idx]) ** (-self.beta)
        weights = weights / weights.max()
        return [self.data[i] for i in idx], idx, weights

    def update_priorities(self, indices, priorities):
        for i, p in zip(indices, priorities):
            if not np.isfinite(p) or p < 0:
                raise ValueError("priorities must be finite and nonnegative")
            self.priorities[i] = p
            self.data[i] = Transition(self.data[i].s, self.data[i].a, self.data[i].r,
                                      self.data[i].s_next, self.data[i].done, float(p))


def per_sample(buffer, batch_size, rng):
    return buffer.sample(batch_size, rng)


# ---------------------------------------------------------------------------
# agent

@dataclass
class AgentConfig:
    obs_dim: int
    act_dim: int
    hidden: int = 64
    gamma: float = 0.95
    tau: float = 0.01
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    optimizer: str = "sgd"        # or "adam"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class _Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        for key, (p, g) in enumerate(zip(params, grads)):
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g ** 2
            mhat = self.m[key] / (1 - self.beta1 ** self.t)
            vhat = self.v[key] / (1 - self.beta2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


class _SGD:
    def step(self, params, grads, lr):
        for p, g in zip(params, grads):
            p -= lr * g


class DDPGAgent:
    """Actor, critic, their targets and the update rules."""

    def __init__(self, config, rng):
        self.config = config
        self.actor = mlp_init([config.obs_dim, config.hidden, config.act_dim],
                              ["relu", "tanh"], rng, final_bound=3e-3)
        self.critic = mlp_init([config.obs_dim + config.act_dim, config.hidden, 1],
                               ["relu", "linear"], rng, final_bound=3e-3)
        self.target_actor = clone_mlp(self.actor)
        self.target_critic = clone_mlp(self.critic)
        if config.optimizer == "adam":
            self.actor_opt, self.critic_opt = _Adam(), _Adam()
        else:
            self.actor_opt, self.critic_opt = _SGD(), _SGD()

    def act(self, s):
        return actor_forward(self.actor, s)

    def soft_update_targets(self):
        soft_update(self.actor, self.target_actor, self.config.tau)
        soft_update(self.critic, self.target_critic, self.config.tau)


def ddpg_update(agent, batch, weights=None):
    """One critic and one actor gradient step on a minibatch.

    Returns (critic loss, new priorities |y - Q(s, a)| per transition).
    """
    if not batch:
        raise ValueError("empty minibatch")
    cfg = agent.config
    S = np.stack([t.s for t in batch])
    A = np.stack([t.a for t in batch])
    R = np.array([t.r for t in batch])
    S2 = np.stack([t.s_next for t in batch])
    done = np.array([t.done for t in batch], dtype=float)
    B = len(batch)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)

    # bootstrapped target from the target networks
    a2 = mlp_forward(agent.target_actor, S2)
    q2 = mlp_forward(agent.target_critic, np.hstack([S2, a2]))[:, 0]
    y = R + (1.0 - done) * cfg.gamma * q2

    # critic step: weighted mean squared TD error
    q_out, c_caches = _forward_cached(agent.critic, np.hstack([S, A]))
    td = y - q_out[:, 0]
    critic_loss = float(np.mean(w * td ** 2))
    if not np.isfinite(critic_loss):
        raise RuntimeError("training divergence")
    dq = (-2.0 * w * td / B)[:, None]
    c_grads, _ = _backward(agent.critic, c_caches, dq)
    agent.critic_opt.step(list(agent.critic.parameters()),
                          [g for dW, db in c_grads for g in (dW, db)],
                          cfg.critic_lr)

    # actor step: ascend mean Q(s, mu(s)) through the critic's action input
    mu, a_caches = _forward_cached(agent.actor, S)
    q_mu, c2_caches = _forward_cached(agent.critic, np.hstack([S, mu]))
    dq_mu = np.full((B, 1), 1.0 / B)
    _, dinput = _backward(agent.critic, c2_caches, dq_mu)
    da = dinput[:, cfg.obs_dim:]
    a_grads, _ = _backward(agent.actor, a_caches, da)
    # gradient ascent: negate
    agent.actor_opt.step(list(agent.actor.parameters()),
                         [-g for dW, db in a_grads for g in (dW, db)],
                         cfg.actor_lr)

    return critic_loss, np.abs(td)
