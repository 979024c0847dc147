"""Continuous-time Markov chain: exact simulation and occupation-time analytics.

Occupation-time Laplace functionals E[exp(sum_j w_j T_j)] are computed
without simulation through the Feynman-Kac representation: the value is
the i0-th row sum of ``exp(T (Q + diag(w)))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import mat_exp


@dataclass
class ChainPath:
    """One chain trajectory on [0, T]: jump times and visited states.

    ``states`` has one more entry than ``jump_times``; consecutive
    visited states differ.  The chain is cadlag: state ``states[k]``
    holds on ``[jump_times[k-1], jump_times[k])``.
    """

    initial_state: int
    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_before(self, t):
        """Left-limit state alpha_{t-} for t in (0, T]; vectorized in t."""
        idx = np.searchsorted(self.jump_times, np.asarray(t), side="left")
        return self.states[idx]

    def state_at(self, t):
        """Cadlag state alpha_t; vectorized in t."""
        idx = np.searchsorted(self.jump_times, np.asarray(t), side="right")
        return self.states[idx]

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size


def simulate_chain(q: np.ndarray, initial_state: int, horizon: float,
                   rng: np.random.Generator) -> ChainPath:
    """Exact event-driven simulation of the chain.

    Holding times are exponential with rate ``-q[j, j]``; the next state
    is drawn with probabilities ``q[j, k] / -q[j, j]``.  A state with a
    zero row is absorbing.  No time discretization is involved.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    times = []
    states = [int(initial_state)]
    t = 0.0
    j = int(initial_state)
    while True:
        rate = -q[j, j]
        if rate <= 0.0:
            break  # absorbing
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        probs = q[j].copy()
        probs[j] = 0.0
        probs = probs / rate
        j = int(rng.choice(n, p=probs))
        times.append(t)
        states.append(j)
    return ChainPath(
        initial_state=int(initial_state),
        jump_times=np.asarray(times, dtype=float),
        states=np.asarray(states, dtype=np.int64),
        horizon=float(horizon),
    )


def occupation_times(path: ChainPath, n_states: int) -> np.ndarray:
    """Time spent in each state on [0, T]; entries sum exactly to T."""
    edges = np.concatenate([[0.0], path.jump_times, [path.horizon]])
    lengths = np.diff(edges)
    occ = np.zeros(n_states)
    np.add.at(occ, path.states, lengths)
    return occ


def occupation_laplace(q: np.ndarray, initial_state: int, weights: np.ndarray,
                       horizon: float):
    """E[exp(sum_j weights[j] * T_j)] over chain paths, exactly.

    ``weights`` may be complex, which yields the characteristic function
    of the switching process when the per-regime characteristic
    exponents are supplied as weights.
    """
    q = np.asarray(q, dtype=float)
    weights = np.atleast_1d(np.asarray(weights))
    if weights.shape != (q.shape[0],):
        raise ValueError(f"need one weight per state, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    m = mat_exp(q + np.diag(weights), horizon)
    total = m[int(initial_state)].sum()
    return complex(total) if np.iscomplexobj(weights) else float(total.real if np.iscomplexobj(m) else total)


def expected_occupation(q: np.ndarray, initial_state: int, horizon: float) -> np.ndarray:
    """E[T_j] for each state, via the augmented-generator exponential.

    Stacks ``[[Q, I], [0, 0]]``; the top-right block of its exponential
    at time T is ``integral_0^T exp(Qs) ds``, whose i0-th row gives the
    expected occupations.  Entries sum to T.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = q
    aug[:n, n:] = np.eye(n)
    big = mat_exp(aug, horizon)
    return big[int(initial_state), n:]


def expected_occupation_quadrature(q: np.ndarray, initial_state: int, horizon: float,
                                   n_points: int = 2000) -> np.ndarray:
    """Simpson-rule cross-check of :func:`expected_occupation`.

    Integrates the transition-probability row with a fixed step
    ``horizon / n_points``; kept as an independent second route.
    """
    q = np.asarray(q, dtype=float)
    if n_points % 2:
        n_points += 1
    s = np.linspace(0.0, horizon, n_points + 1)
    rows = np.stack([mat_exp(q, si)[int(initial_state)] for si in s])
    h = horizon / n_points
    coef = np.ones(n_points + 1)
    coef[1:-1:2] = 4.0
    coef[2:-1:2] = 2.0
    return (h / 3.0) * (coef[:, None] * rows).sum(axis=0)
