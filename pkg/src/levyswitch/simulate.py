"""Path simulation for the switching process, prices, densities and wealth.

Design: the chain is simulated event-exactly, compound-Poisson jump
times are drawn at exact exponential times, and both are inserted into
the uniform time grid.  Between grid points the diffusion is advanced
by exact Gaussian increments, so the only discretization left in the
whole pipeline is the rebalancing frequency of trading strategies.

Randomness contract: path ``i`` of a run draws from a counter-based
Philox stream keyed by ``(seed, i)``, so results are independent of
how paths are batched across worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .chain import ChainPath, occupation_times, simulate_chain
from .models import SwitchingModel

_MASK64 = (1 << 64) - 1


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one path, keyed by (seed, path index)."""
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class ModelArrays:
    """Per-regime constants stacked for vectorized interval arithmetic."""

    sigma: np.ndarray        # (N, d, d)
    lin_drift: np.ndarray    # (N, d) drift between jump events
    c_diag: np.ndarray       # (N, d) diagonal of c per regime
    intensity: np.ndarray    # (N,) total jump intensity
    atom_probs: List[np.ndarray]
    atoms: List[np.ndarray]

    @classmethod
    def build(cls, model: SwitchingModel) -> "ModelArrays":
        sig = np.stack([r.sigma for r in model.regimes])
        lin = np.stack([r.linear_drift() for r in model.regimes])
        cdg = np.stack([np.diag(r.covariance) for r in model.regimes])
        inten = np.array([r.jumps.intensity if r.has_jumps() else 0.0 for r in model.regimes])
        probs = [r.jumps.probs if r.has_jumps() else np.zeros(0) for r in model.regimes]
        atoms = [r.jumps.atoms if r.has_jumps() else np.zeros((0, model.dim)) for r in model.regimes]
        return cls(sig, lin, cdg, inten, probs, atoms)


@dataclass
class PathBundle:
    """One simulated trajectory of (chain, X) on a refined grid.

    ``times`` is the union of the uniform grid, chain switch times and
    jump event times.  ``labels[m]`` is the regime governing the open
    interval ``(times[m], times[m+1]]`` (the left-limit chain state).
    Jumps are recorded against the step at whose right endpoint they
    land; ``x`` is right-continuous.
    """

    chain: ChainPath
    times: np.ndarray        # (M+1,)
    dt: np.ndarray           # (M,)
    labels: np.ndarray       # (M,)
    diffusion: np.ndarray    # (M, d) sigma dW per step
    x: np.ndarray            # (M+1, d)
    jump_steps: np.ndarray   # (K,) step indices
    jump_regimes: np.ndarray  # (K,)
    jump_atoms: np.ndarray   # (K,)
    base_index: np.ndarray   # (M+1,) index into the uniform grid, -1 for inserted points

    @property
    def n_steps(self) -> int:
        return self.dt.size

    def occupations(self, n_states: int) -> np.ndarray:
        """Terminal occupation time per regime (exact)."""
        return occupation_times(self.chain, n_states)

    def occupation_running(self, n_states: int) -> np.ndarray:
        """Cumulative occupation per regime at every grid point, (N, M+1)."""
        out = np.zeros((n_states, self.times.size))
        for j in range(n_states):
            out[j, 1:] = np.cumsum(self.dt * (self.labels == j))
        return out

    def rebalance_steps(self, coarsen: int = 1) -> np.ndarray:
        """Map each step to the latest allowed rebalance step at or before it.

        ``coarsen=k`` keeps every k-th uniform grid point as a rebalance
        date; switch and jump-event points are always kept, so the
        coarse date set is itself a valid refined grid.
        """
        m = self.n_steps
        if coarsen <= 1:
            return np.arange(m)
        base = self.base_index[:m]
        is_date = (base < 0) | (base % coarsen == 0)
        idx = np.where(is_date, np.arange(m), -1)
        return np.maximum.accumulate(idx)


def sample_jump_events(chain: ChainPath, arrays: ModelArrays, rng: np.random.Generator):
    """Exact compound-Poisson event times along a chain path.

    Events for regime j occur at rate ``intensity[j]`` while the left
    limit of the chain is j; marks are drawn per event from the
    regime's atom distribution.
    """
    edges = np.concatenate([[0.0], chain.jump_times, [chain.horizon]])
    times, regimes, atoms = [], [], []
    for k, j in enumerate(chain.states):
        lam = arrays.intensity[j]
        if lam <= 0.0:
            continue
        t, t_end = edges[k], edges[k + 1]
        while True:
            t += rng.exponential(1.0 / lam)
            if t >= t_end:
                break
            times.append(t)
            regimes.append(j)
            atoms.append(int(rng.choice(arrays.atom_probs[j].size, p=arrays.atom_probs[j])))
    return (np.asarray(times, dtype=float), np.asarray(regimes, dtype=np.int64),
            np.asarray(atoms, dtype=np.int64))


def build_bundle(model: SwitchingModel, rng: np.random.Generator, steps_per_unit: int,
                 arrays: Optional[ModelArrays] = None,
                 chain: Optional[ChainPath] = None) -> PathBundle:
    """Simulate one full path bundle on the refined grid.

    Draw order is fixed (chain, jump events, Gaussian block) so a given
    stream always produces the same path.
    """
    if arrays is None:
        arrays = ModelArrays.build(model)
    horizon = model.horizon
    if chain is None:
        chain = simulate_chain(model.generator, model.initial_state, horizon, rng)
    ev_times, ev_regimes, ev_atoms = sample_jump_events(chain, arrays, rng)

    n_base = max(1, int(round(steps_per_unit * horizon)))
    base = np.linspace(0.0, horizon, n_base + 1)
    times = np.unique(np.concatenate([base, chain.jump_times, ev_times]))
    base_index = np.full(times.size, -1, dtype=np.int64)
    pos = np.searchsorted(times, base)
    base_index[pos] = np.arange(n_base + 1)

    dt = np.diff(times)
    labels = chain.state_at(times[:-1])

    d = model.dim
    normals = rng.standard_normal((dt.size, d))
    diffusion = np.einsum("mij,mj->mi", arrays.sigma[labels], normals) * np.sqrt(dt)[:, None]

    dx = arrays.lin_drift[labels] * dt[:, None] + diffusion
    if ev_times.size:
        steps = np.searchsorted(times, ev_times) - 1
        for s, j, a in zip(steps, ev_regimes, ev_atoms):
            dx[s] += arrays.atoms[j][a]
        jump_steps = steps
    else:
        jump_steps = np.zeros(0, dtype=np.int64)

    x = np.zeros((times.size, d))
    np.cumsum(dx, axis=0, out=x[1:])
    return PathBundle(
        chain=chain, times=times, dt=dt, labels=labels, diffusion=diffusion,
        x=x, jump_steps=jump_steps, jump_regimes=ev_regimes, jump_atoms=ev_atoms,
        base_index=base_index,
    )


def price_paths(bundle: PathBundle, model: SwitchingModel,
                arrays: Optional[ModelArrays] = None) -> np.ndarray:
    """Doleans-Dade price of every asset along the bundle, (M+1, d).

    The continuous part multiplies by ``exp(dX_cont - c_kk dt / 2)``
    exactly; each jump multiplies component k by ``1 + jump_k``.  Prices
    stay strictly positive because atoms exceed -1 componentwise.
    """
    if arrays is None:
        arrays = ModelArrays.build(model)
    lab = bundle.labels
    dlog = (arrays.lin_drift[lab] - 0.5 * arrays.c_diag[lab]) * bundle.dt[:, None] + bundle.diffusion
    for s, j, a in zip(bundle.jump_steps, bundle.jump_regimes, bundle.jump_atoms):
        dlog[s] += np.log1p(arrays.atoms[j][a])
    logs = np.concatenate([np.zeros((1, model.dim)), np.cumsum(dlog, axis=0)])
    return model.s0[None, :] * np.exp(logs)


@dataclass
class DensityCoefficients:
    """Per-regime pieces of the log density increment."""

    beta: np.ndarray        # (N, d)
    drift_comp: np.ndarray  # (N,) quadratic + jump compensator rate
    log_mult: List[np.ndarray]  # ln Y per atom, per regime

    @classmethod
    def build(cls, model: SwitchingModel, solutions) -> "DensityCoefficients":
        betas, comps, logs = [], [], []
        for triplet, sol in zip(model.regimes, solutions):
            beta = sol.beta
            rates, _ = triplet.jump_terms()
            comp = 0.5 * float(beta @ (triplet.covariance @ beta))
            if rates.size:
                comp += float(np.sum(rates * (sol.multipliers - 1.0)))
            betas.append(beta)
            comps.append(comp)
            logs.append(np.log(sol.multipliers) if rates.size else np.zeros(0))
        return cls(np.stack(betas), np.asarray(comps), logs)


def density_path(bundle: PathBundle, coeffs: DensityCoefficients) -> np.ndarray:
    """Radon-Nikodym density process Z along the bundle, Z_0 = 1.

    Log increments in regime j: ``<beta_j, sigma_j dW> - comp_j dt``
    plus ``ln Y`` at each jump (the exact exponential-martingale form
    for diffusion plus compound Poisson).
    """
    lab = bundle.labels
    dlog = np.einsum("md,md->m", coeffs.beta[lab], bundle.diffusion) - coeffs.drift_comp[lab] * bundle.dt
    for s, j, a in zip(bundle.jump_steps, bundle.jump_regimes, bundle.jump_atoms):
        dlog[s] += coeffs.log_mult[j][a]
    logz = np.concatenate([[0.0], np.cumsum(dlog)])
    return np.exp(logz)


def wealth_from_shares(prices: np.ndarray, shares: np.ndarray, x0: float):
    """Self-financing wealth for predictable share holdings.

    ``shares[m]`` is held over ``(t_m, t_{m+1}]``; the wealth increment
    is the inner product with the price move.  Returns the wealth path
    and the running minimum of the gain process (admissibility floor).
    """
    gains = np.concatenate([[0.0], np.cumsum(np.einsum("md,md->m", shares, np.diff(prices, axis=0)))])
    return x0 + gains, float(gains.min())


def wealth_from_fractions(prices: np.ndarray, fractions: np.ndarray, x0: float,
                          rebalance: np.ndarray):
    """Wealth when target monetary fractions are restated at rebalance dates.

    ``fractions[m]`` applies at rebalance step m; share holdings stay
    fixed between dates.  Wealth that hits zero or below is absorbed at
    zero (trading stops), which is reported as an admissibility breach
    by the caller.  Returns the wealth path and the gain floor.
    """
    m = fractions.shape[0]
    dates = np.unique(rebalance)
    bounds = np.append(dates, m)
    v = np.empty(m + 1)
    v[0] = x0
    cur = x0
    alive = True
    for b, nxt in zip(bounds[:-1], bounds[1:]):
        if not alive or cur <= 0.0:
            v[b: nxt + 1] = 0.0
            cur = 0.0
            alive = False
            continue
        shares = fractions[b] * cur / prices[b]
        seg = cur + np.cumsum((np.diff(prices[b: nxt + 1], axis=0) * shares).sum(axis=1))
        v[b + 1: nxt + 1] = seg
        cur = seg[-1] if seg.size else cur
        if np.any(seg <= 0.0):
            bad = b + 1 + int(np.argmax(seg <= 0.0))
            v[bad:] = 0.0
            cur = 0.0
            alive = False
    gains = v - x0
    return v, float(gains.min())


def map_paths(model: SwitchingModel, n_paths: int, seed: int, steps_per_unit: int,
              path_fn: Callable[[PathBundle], np.ndarray], workers: int = 1) -> np.ndarray:
    """Evaluate a per-path functional over independent paths.

    Returns an (n_paths, k) array.  The result is bit-identical for any
    worker count: path i's stream depends only on (seed, i) and the
    output lands at row i.
    """
    arrays = ModelArrays.build(model)
    out: List[Optional[np.ndarray]] = [None] * n_paths

    def run(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            rng = path_stream(seed, i)
            bundle = build_bundle(model, rng, steps_per_unit, arrays=arrays)
            out[i] = np.atleast_1d(np.asarray(path_fn(bundle), dtype=float))

    _run_partitioned(run, n_paths, workers)
    return np.vstack(out)


def map_chain_paths(model: SwitchingModel, n_paths: int, seed: int,
                    path_fn: Callable[[ChainPath], np.ndarray], workers: int = 1) -> np.ndarray:
    """Chain-only analogue of :func:`map_paths` (no diffusion draws)."""
    out: List[Optional[np.ndarray]] = [None] * n_paths

    def run(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            rng = path_stream(seed, i)
            chain = simulate_chain(model.generator, model.initial_state, model.horizon, rng)
            out[i] = np.atleast_1d(np.asarray(path_fn(chain), dtype=float))

    _run_partitioned(run, n_paths, workers)
    return np.vstack(out)


def _run_partitioned(run, n_paths: int, workers: int) -> None:
    if workers <= 1 or n_paths < 2:
        run(0, n_paths)
        return
    workers = min(workers, n_paths)
    edges = np.linspace(0, n_paths, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]
        for fut in futures:
            fut.result()
