"""Multi-machine grid models: construction, simulation, exact eigenanalysis.

The model is a network-reduced classical swing model: generators are constant
voltages behind reactance, loads are folded into the reduced conductance /
susceptance matrices G and B.  The state is x = [theta, omega, x_rem].
"""

import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

import numpy as np
from scipy.linalg import expm


class DivergenceError(RuntimeError):
    """Raised when a simulated state stops being finite."""

    def __init__(self, step):
        super().__init__(f"numerical divergence at step {step}")
        self.step = step


@dataclass(frozen=True)
class MachineData:
    """Parameters of one generator in the reduced model."""

    inertia: float          # M_i, s^2 / pu
    damping: float          # D_i, pu
    voltage: float          # internal EMF magnitude E_i, pu
    p_mech: float           # mechanical power P_m,i, pu
    controlled: bool = False
    reference: bool = False

    def __post_init__(self):
        if self.inertia <= 0:
            raise ValueError("machine inertia must be positive")
        if self.voltage <= 0:
            raise ValueError("machine voltage must be positive")


@dataclass(frozen=True)
class GridModel:
    """Linearized grid model with its generator metadata.

    A, B1, B2 are the continuous-time state-space matrices about the
    equilibrium theta_star; G and B are the reduced network matrices used by
    the nonlinear simulator.
    """

    machines: tuple
    G: np.ndarray
    B: np.ndarray
    theta_star: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    dt: float

    @property
    def n_g(self):
        return len(self.machines)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B1.shape[1]

    @property
    def q(self):
        return self.B2.shape[1]

    @property
    def n_rem(self):
        return self.n - 2 * self.n_g

    @property
    def controlled(self):
        return [i for i, m in enumerate(self.machines) if m.controlled]

    @property
    def reference(self):
        return next(i for i, m in enumerate(self.machines) if m.reference)

    def observation_matrix(self):
        """Map state -> observation (theta - theta_ref, omega), shape m x n."""
        ng, ref = self.n_g, self.reference
        C = np.zeros((2 * ng, self.n))
        C[:ng, :ng] = np.eye(ng)
        C[:ng, ref] -= 1.0
        C[ng:, ng:2 * ng] = np.eye(ng)
        return C


@dataclass(frozen=True)
class SystemState:
    """One snapshot of the swing dynamics."""

    theta: np.ndarray
    omega: np.ndarray
    x_rem: np.ndarray = field(default_factory=lambda: np.empty(0))

    def as_vector(self):
        return np.concatenate([self.theta, self.omega, self.x_rem])

    @staticmethod
    def from_vector(x, n_g):
        x = np.asarray(x, dtype=float)
        return SystemState(x[:n_g].copy(), x[n_g:2 * n_g].copy(), x[2 * n_g:].copy())


@dataclass(frozen=True)
class FaultScenario:
    """Three-phase fault on one line with staged clearing.

    Holds the reduced (G, B) pairs for the pre-fault, fault-on and post-fault
    networks; switching happens at the first step boundary >= each event time.
    """

    line: tuple
    t_start: float
    t_clear_near: float
    t_clear_remote: float
    pre: tuple      # (G, B)
    during: tuple
    post: tuple

    def __post_init__(self):
        if not (self.t_start < self.t_clear_near < self.t_clear_remote):
            raise ValueError("fault times must satisfy start < near clearing < remote clearing")
        for G, B in (self.pre, self.during, self.post):
            if not (np.allclose(G, G.T) and np.allclose(B, B.T)):
                raise ValueError("fault network matrices must be symmetric")

    def network_at(self, t):
        if t < self.t_start:
            return self.pre
        if t < self.t_clear_near:
            return self.during
        if t < self.t_clear_remote:
            # fault still fed from the remote end until its breaker opens
            return self.during
        return self.post


def _check_network(machines, G, B):
    ng = len(machines)
    G = np.asarray(G, dtype=float)
    B = np.asarray(B, dtype=float)
    if G.shape != (ng, ng) or B.shape != (ng, ng):
        raise ValueError("network matrices must be n_g x n_g")
    if not np.allclose(G, G.T) or not np.allclose(B, B.T):
        raise ValueError("network matrices must be symmetric")
    # a machine with no coupling at all cannot reach an equilibrium exchange
    off = (np.abs(B) + np.abs(G)) - np.diag(np.diag(np.abs(B) + np.abs(G)))
    if np.any(off.sum(axis=1) == 0.0) and ng > 1:
        raise ValueError("disconnected network")
    return G, B


def electrical_power(machines, G, B, theta):
    """P_e,i = sum_j E_i E_j (G_ij cos(theta_i - theta_j) + B_ij sin(theta_i - theta_j))."""
    E = np.array([m.voltage for m in machines])
    dth = theta[:, None] - theta[None, :]
    P = (E[:, None] * E[None, :]) * (G * np.cos(dth) + B * np.sin(dth))
    return P.sum(axis=1)


def _power_jacobian(machines, G, B, theta):
    """d P_e / d theta, analytic."""
    E = np.array([m.voltage for m in machines])
    dth = theta[:, None] - theta[None, :]
    EE = E[:, None] * E[None, :]
    # off-diagonal: d P_e,i / d theta_j (j != i)
    J = EE * (G * np.sin(dth) - B * np.cos(dth))
    np.fill_diagonal(J, 0.0)
    # diagonal: minus the row sum of the off-diagonal terms
    np.fill_diagonal(J, -J.sum(axis=1))
    return J


def solve_equilibrium(machines, G, B, tol=1e-10, max_iter=50):
    """Newton solve of P_m = P_e with the reference angle pinned to zero.

    The reference generator acts as the slack: its mechanical power is
    redefined to the electrical power at the solution so the balance is exact.
    Returns (theta_star, machines_with_slack_pm).
    """
    ng = len(machines)
    ref = next(i for i, m in enumerate(machines) if m.reference)
    free = [i for i in range(ng) if i != ref]
    Pm = np.array([m.p_mech for m in machines])
    theta = np.zeros(ng)
    for _ in range(max_iter):
        mism = Pm - electrical_power(machines, G, B, theta)
        if np.linalg.norm(mism[free], np.inf) < tol:
            break
        J = _power_jacobian(machines, G, B, theta)
        Jr = J[np.ix_(free, free)]
        try:
            step = np.linalg.solve(Jr, mism[free])
        except np.linalg.LinAlgError:
            raise RuntimeError("no stationary operating point") from None
        if not np.all(np.isfinite(step)):
            raise RuntimeError("no stationary operating point")
        theta[free] += step
    else:
        raise RuntimeError("no stationary operating point")
    pe = electrical_power(machines, G, B, theta)
    balanced = list(machines)
    balanced[ref] = MachineData(
        machines[ref].inertia, machines[ref].damping, machines[ref].voltage,
        float(pe[ref]), machines[ref].controlled, machines[ref].reference)
    return theta, tuple(balanced)


def build_linear_model(machines, G, B, dt):
    """Linearize the reduced swing model at its stationary operating point."""
    machines = tuple(machines)
    if sum(m.reference for m in machines) != 1:
        raise ValueError("exactly one generator must be the reference")
    if not any(m.controlled for m in machines):
        raise ValueError("at least one generator must be controlled")
    if dt <= 0:
        raise ValueError("dt must be positive")
    G, B = _check_network(machines, G, B)
    theta_star, machines = solve_equilibrium(machines, G, B)
    ng = len(machines)
    M = np.array([m.inertia for m in machines])
    D = np.array([m.damping for m in machines])
    J = _power_jacobian(machines, G, B, theta_star)

    n = 2 * ng
    A = np.zeros((n, n))
    A[:ng, ng:] = np.eye(ng)
    A[ng:, :ng] = -J / M[:, None]
    A[ng:, ng:] = -np.diag(D / M)

    ctrl = [i for i, m in enumerate(machines) if m.controlled]
    B1 = np.zeros((n, len(ctrl)))
    for col, i in enumerate(ctrl):
        B1[ng + i, col] = 1.0 / M[i]
    B2 = np.zeros((n, ng))
    for i in range(ng):
        B2[ng + i, i] = 1.0 / M[i]

    return GridModel(machines, G, B, theta_star, A, B1, B2, dt)


def zoh_discretize(A, B, dt):
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A * dt
    aug[:n, n:] = B * dt
    E = expm(aug)
    return E[:n, :n], E[:n, n:]


def simulate_linear(model, x0, control_fn, noise_std, T_steps, seed):
    """Simulate the linear model for T_steps with exact ZOH stepping.

    control_fn maps (step index, SystemState) -> u in R^p, or None for u = 0.
    Returns T_steps + 1 SystemState snapshots including the initial one.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ValueError("initial state dimension mismatch")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    Ad, Bd = zoh_discretize(model.A, np.hstack([model.B1, model.B2]), model.dt)
    B1d, B2d = Bd[:, :model.p], Bd[:, model.p:]
    rng = np.random.default_rng(seed)
    ng = model.n_g
    x = x0.copy()
    out = [SystemState.from_vector(x, ng)]
    for k in range(T_steps):
        u = np.zeros(model.p) if control_fn is None else np.asarray(control_fn(k, out[-1]), dtype=float)
        eta = rng.normal(0.0, noise_std, model.q) if noise_std > 0 else np.zeros(model.q)
        x = Ad @ x + B1d @ u + B2d @ eta
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1)
        out.append(SystemState.from_vector(x, ng))
    return out


def _swing_rhs(machines, G, B, M, D, Pm, state, u_full):
    ng = len(machines)
    theta, omega = state[:ng], state[ng:]
    pe = electrical_power(machines, G, B, theta)
    dtheta = omega
    domega = (Pm - pe - D * omega + u_full) / M
    return np.concatenate([dtheta, domega])


def rk4_swing_step(machines, G, B, x, u_full, dt):
    """One fixed-step RK4 advance of the reduced swing equations."""
    M = np.array([m.inertia for m in machines])
    D = np.array([m.damping for m in machines])
    Pm = np.array([m.p_mech for m in machines])
    k1 = _swing_rhs(machines, G, B, M, D, Pm, x, u_full)
    k2 = _swing_rhs(machines, G, B, M, D, Pm, x + 0.5 * dt * k1, u_full)
    k3 = _swing_rhs(machines, G, B, M, D, Pm, x + 0.5 * dt * k2, u_full)
    k4 = _swing_rhs(machines, G, B, M, D, Pm, x + dt * k3, u_full)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_nonlinear(machines, scenario, control_fn, dt, T_steps, x0=None):
    """Fixed-step RK4 integration of the reduced swing equations.

    The (G, B) pair switches at the first step boundary at or after each fault
    event time.  Control inputs are additive power on the controlled
    generators' omega equations and are held constant over each step.
    """
    machines = tuple(machines)
    ng = len(machines)
    ctrl = [i for i, m in enumerate(machines) if m.controlled]

    if x0 is None:
        theta0, _ = solve_equilibrium(machines, *scenario.pre)
        x0 = np.concatenate([theta0, np.zeros(ng)])
    x = np.asarray(x0, dtype=float).copy()
    out = [SystemState.from_vector(x, ng)]
    for k in range(T_steps):
        t = k * dt
        G, B = scenario.network_at(t)
        u = np.zeros(len(ctrl)) if control_fn is None else np.asarray(control_fn(k, out[-1]), dtype=float)
        u_full = np.zeros(ng)
        u_full[ctrl] = u
        x = rk4_swing_step(machines, G, B, x, u_full, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(k + 1)
        out.append(SystemState.from_vector(x, ng))
    return out


def sort_spectrum(eigs):
    """Canonical order: descending real part, ties by descending imaginary part."""
    eigs = np.asarray(eigs)
    order = np.lexsort((-eigs.imag, -eigs.real))
    return eigs[order]


def exact_eigenvalues(model, K):
    """Spectrum of the closed loop A - B1 K, K zero-padded over x_rem columns."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    m = 2 * model.n_g
    if K.shape != (model.p, m):
        raise ValueError("gain shape mismatch")
    K_lift = np.zeros((model.p, model.n))
    K_lift[:, :m] = K
    return sort_spectrum(np.linalg.eigvals(model.A - model.B1 @ K_lift))


# ---------------------------------------------------------------------------
# model file I/O


def _matrix_from_rows(rows, ng, what):
    M = np.array(rows, dtype=float)
    if M.shape != (ng, ng):
        raise ValueError(f"{what} matrix must be {ng}x{ng}")
    return M


def load_model_file(path):
    """Read a TOML model file -> (GridModel, FaultScenario or None).

    Layout: [[machine]] tables with M/D/E/Pm/controlled/reference, a [network]
    table with row-major G and B, top-level dt, and optional [fault.during] /
    [fault.post] network matrices for the bundled fault scenario.
    """
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    known = {"machine", "network", "dt", "fault"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown keys in model file: {sorted(unknown)}")
    machines = []
    for i, m in enumerate(raw.get("machine", [])):
        extra = set(m) - {"M", "D", "E", "Pm", "controlled", "reference"}
        if extra:
            raise ValueError(f"unknown keys in machine {i + 1}: {sorted(extra)}")
        machines.append(MachineData(
            inertia=float(m["M"]), damping=float(m["D"]), voltage=float(m["E"]),
            p_mech=float(m["Pm"]), controlled=bool(m.get("controlled", False)),
            reference=bool(m.get("reference", False))))
    if not machines:
        raise ValueError("model file declares no machines")
    ng = len(machines)
    net = raw["network"]
    G = _matrix_from_rows(net["G"], ng, "G")
    B = _matrix_from_rows(net["B"], ng, "B")
    dt = float(raw.get("dt", 0.01))
    model = build_linear_model(machines, G, B, dt)

    scenario = None
    if "fault" in raw:
        f = raw["fault"]
        Gd = _matrix_from_rows(f["during"]["G"], ng, "fault-on G")
        Bd = _matrix_from_rows(f["during"]["B"], ng, "fault-on B")
        Gp = _matrix_from_rows(f["post"]["G"], ng, "post-fault G")
        Bp = _matrix_from_rows(f["post"]["B"], ng, "post-fault B")
        scenario = FaultScenario(
            line=tuple(f.get("line", (0, 0))),
            t_start=float(f.get("t_start", 0.1)),
            t_clear_near=float(f.get("t_clear_near", 0.2)),
            t_clear_remote=float(f.get("t_clear_remote", 0.5)),
            pre=(model.G, model.B), during=(Gd, Bd), post=(Gp, Bp))
    return model, scenario


def trajectory_to_csv(states, dt, path, scs_flags=None):
    """Write a trajectory as CSV: t, theta_1.., omega_1.. (12 significant digits)."""
    ng = len(states[0].theta)
    cols = ["t"] + [f"theta_{i + 1}" for i in range(ng)] + [f"omega_{i + 1}" for i in range(ng)]
    if scs_flags is not None:
        cols.append("scs_on")
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for k, s in enumerate(states):
            vals = [k * dt, *s.theta, *s.omega]
            row = ",".join(f"{v:.12g}" for v in vals)
            if scs_flags is not None:
                row += f",{int(scs_flags[min(k, len(scs_flags) - 1)])}"
            f.write(row + "\n")
