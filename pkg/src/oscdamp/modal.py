"""Modal analysis: exact modes, participation factors, DMD, spectrum pairing."""

from dataclasses import dataclass

import numpy as np

from .grid import sort_spectrum

OSC_TOL = 1e-9          # smallest imaginary part treated as oscillatory
SVD_RELATIVE_CUT = 1e-10


@dataclass(frozen=True)
class Mode:
    """One eigenvalue with its eigenvectors and derived metrics."""

    lam: complex
    phi: np.ndarray      # right eigenvector
    psi: np.ndarray      # left eigenvector, psi^T phi = 1
    freq: float
    damping: float
    participation: np.ndarray

    def generator_participation(self, n_g):
        """Aggregate state participations per generator: pi(theta_i) + pi(omega_i)."""
        return self.participation[:n_g] + self.participation[n_g:2 * n_g]


@dataclass(frozen=True)
class SnapshotWindow:
    """Sequential observation snapshots, columns ordered by time."""

    X: np.ndarray        # n_obs x (W + 1)
    dt: float

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] < 3:
            raise ValueError("insufficient data")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("snapshot window contains non-finite values")

    @property
    def window(self):
        return self.X.shape[1] - 1


@dataclass(frozen=True)
class SpectrumPairing:
    pairs: tuple                 # (closed index, open index)
    unmatched_closed: tuple
    unmatched_open: tuple


def mode_metrics(lam):
    """Natural frequency |lambda| and damping ratio -Re/|lambda| of one mode."""
    f = abs(lam)
    if f == 0.0:
        return 0.0, 0.0
    return f, -lam.real / f


def participation_factors(A):
    """Modes of A with participation vectors pi_i = |psi_i phi_i| / sum_j |psi_j phi_j|."""
    A = np.asarray(A)
    lams, Phi = np.linalg.eig(A)
    if np.linalg.cond(Phi) > 1e12:
        raise ValueError("non-diagonalizable within tolerance")
    Psi = np.linalg.inv(Phi)     # row k is the left eigenvector with psi^T phi = 1
    order = np.lexsort((-lams.imag, -lams.real))
    modes = []
    for k in order:
        prod = np.abs(Psi[k, :] * Phi[:, k])
        pi = prod / prod.sum()
        f, zeta = mode_metrics(lams[k])
        modes.append(Mode(lams[k], Phi[:, k], Psi[k, :], f, zeta, pi))
    return modes


def select_controlled_generators(modes, target_mode, count, n_g):
    """Indices of the `count` generators with the largest aggregated participation.

    Ties break toward the lower generator index.  Indices are zero-based.
    """
    if not 1 <= count <= n_g:
        raise ValueError("count out of range")
    gp = target_mode.generator_participation(n_g)
    order = sorted(range(n_g), key=lambda i: (-gp[i], i))
    return sorted(order[:count])


def dmd_estimate(window):
    """Continuous-time eigenvalues from snapshot data by exact DMD.

    X holds columns 0..W-1, Y columns 1..W; the reduced propagator is
    F = U* Y V Sigma^-1 from the truncated SVD of X.  Discrete eigenvalues are
    mapped by the principal logarithm lambda = ln(mu) / dt.
    """
    if window.window < 2:
        raise ValueError("insufficient data")
    X = window.X[:, :-1]
    Y = window.X[:, 1:]
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("insufficient data")
    r = int(np.sum(s > SVD_RELATIVE_CUT * s[0]))
    if r == 0:
        raise ValueError("insufficient data")
    U, s, Vh = U[:, :r], s[:r], Vh[:r, :]
    F = U.conj().T @ Y @ Vh.conj().T @ np.diag(1.0 / s)
    mu = np.linalg.eigvals(F)
    mu = mu[np.abs(mu) >= 1e-12].astype(complex)
    lam = np.log(mu) / window.dt
    return sort_spectrum(lam)


def oscillatory_representatives(eigs, tol=OSC_TOL):
    """Indices of modes with Im > tol (one representative per conjugate pair)."""
    return [i for i, lam in enumerate(eigs) if lam.imag > tol]


def pair_spectra(closed, open_):
    """Greedy nearest-neighbor pairing of oscillatory closed- and open-loop modes."""
    closed = np.asarray(closed)
    open_ = np.asarray(open_)
    c_idx = oscillatory_representatives(closed)
    o_idx = oscillatory_representatives(open_)
    pairs = []
    free = list(o_idx)
    for ci in c_idx:
        if not free:
            break
        dists = [abs(closed[ci] - open_[oi]) for oi in free]
        best = int(np.argmin(dists))
        pairs.append((ci, free.pop(best)))
    matched_c = {c for c, _ in pairs}
    return SpectrumPairing(
        pairs=tuple(pairs),
        unmatched_closed=tuple(i for i in c_idx if i not in matched_c),
        unmatched_open=tuple(free))
