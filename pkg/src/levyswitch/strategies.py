"""Optimal investment strategies, their theoretical values, and MC estimates.

The optimal strategies are closed-form in the solved market state: the
log-optimal position is ``-x0 beta / (Z S)``, the power-optimal one
carries the factor ``x0 (gamma-1) Z^{gamma-1} exp(sum_j h_j O_j(t))``
with O_j the running occupation of regime j, and the exponential one
holds the fixed monetary amount ``-beta`` per asset (asymptotically
optimal).  All of them are progressively adapted: they read only the
current regime, the density and the occupation so far.

Note the sign of the occupation factor in the power strategy: the
positive sign is the one under which the self-financing wealth solves
dV = (gamma-1) V <beta, dX> and reproduces the dual terminal identity;
it is validated pathwise by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .chain import expected_occupation
from .measure import MarketSolution, UtilitySpec
from .models import SwitchingModel
from .simulate import (DensityCoefficients, ModelArrays, PathBundle, build_bundle,
                       density_path, map_paths, path_stream, price_paths,
                       wealth_from_fractions, wealth_from_shares)

STRATEGY_KINDS = ("optimal", "scaled-optimal", "constant-proportion", "zero")


@dataclass
class StrategySpec:
    """A strategy to evaluate by simulation.

    ``optimal`` uses the closed-form positions for the market's utility.
    ``scaled-optimal`` multiplies the optimal monetary fraction (log,
    power) or monetary amount (exponential) by ``rho``; fraction scaling
    preserves admissibility, which proportional share scaling would not.
    ``constant-proportion`` rebalances to fixed monetary fractions.
    """

    kind: str
    rho: float = 1.0
    fractions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}, got {self.kind!r}")
        self.rho = float(self.rho)
        if self.kind == "scaled-optimal" and not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError("scaled-optimal needs a finite scale factor > 0")
        if self.kind == "constant-proportion":
            if self.fractions is None:
                raise ValueError("constant-proportion needs target fractions")
            self.fractions = np.atleast_1d(np.asarray(self.fractions, dtype=float))

    def label(self) -> str:
        if self.kind == "scaled-optimal":
            return f"scaled-optimal(rho={self.rho:g})"
        if self.kind == "constant-proportion":
            return f"constant-proportion({','.join(f'{f:g}' for f in self.fractions)})"
        return self.kind


@dataclass
class ValueReport:
    """Theoretical and Monte Carlo value of one strategy."""

    utility: str
    strategy: str
    theory_value: float
    lagrange_multiplier: float
    mc_value: float = np.nan
    mc_se: float = np.nan
    n_paths: int = 0
    steps_per_unit: int = 0
    breaches: int = 0
    gain_floor: float = np.nan
    beta: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    hellinger: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kl: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def as_dict(self) -> Dict:
        return {
            "utility": self.utility,
            "strategy": self.strategy,
            "theory_value": self.theory_value,
            "lagrange_multiplier": self.lagrange_multiplier,
            "mc_value": self.mc_value,
            "mc_se": self.mc_se,
            "n_paths": self.n_paths,
            "steps_per_unit": self.steps_per_unit,
            "breaches": self.breaches,
            "gain_floor": self.gain_floor,
            "beta": [list(row) for row in np.atleast_2d(self.beta)],
            "hellinger_rates": list(self.hellinger),
            "kl_rates": list(self.kl),
        }


def theoretical_value(market: MarketSolution) -> ValueReport:
    """Maximal expected utility and its Lagrange multiplier, in closed form.

    log:   ln x0 - sum_j E[T_j] * (rate of E ln Z^{(j)}),  multiplier 1/x0
    power: (x0^p / p) * E exp(sum_j h_j T_j / (gamma-1))
    exp:   1 - e^{-x0} * E exp(-sum_j kappa_j T_j)

    The occupation-Laplace expectations reuse the chain-tilt normalizer;
    expected occupations come from the augmented matrix exponential.
    """
    model, u = market.model, market.utility
    x0 = model.x0
    if u.kind == "log":
        occ = expected_occupation(model.generator, model.initial_state, model.horizon)
        value = float(np.log(x0) - occ @ market.rates.log_density)
        lam0 = 1.0 / x0
    elif u.kind == "power":
        gamma, p = u.gamma, u.p
        c_norm = market.tilt.normalizer
        value = x0 ** p / p * c_norm
        lam0 = x0 ** (1.0 / (gamma - 1.0)) * c_norm
    else:
        d_norm = market.tilt.normalizer
        value = 1.0 - np.exp(-x0) * d_norm
        lam0 = np.exp(-x0) * d_norm
    return ValueReport(
        utility=u.label(),
        strategy="optimal",
        theory_value=float(value),
        lagrange_multiplier=float(lam0),
        beta=market.betas,
        hellinger=market.rates.hellinger,
        kl=market.rates.kl,
    )


def terminal_wealth_identity(market: MarketSolution, occupations: np.ndarray,
                             density_t: float) -> float:
    """Terminal wealth of the continuous-time optimal strategy, pathwise.

    This is ``-f'(lambda_0 Z*_T)`` evaluated from the occupation vector
    and the conditional density: the exact limit the discretely
    rebalanced wealth converges to.
    """
    model, u = market.model, market.utility
    x0 = model.x0
    if u.kind == "log":
        return x0 / density_t
    if u.kind == "power":
        gamma = u.gamma
        return x0 * np.exp(float(market.rates.hellinger @ occupations)) * density_t ** (gamma - 1.0)
    return x0 + float(market.rates.kl @ occupations) - np.log(density_t)


def optimal_shares(market: MarketSolution, labels: np.ndarray, prices: np.ndarray,
                   density: np.ndarray, occupation: np.ndarray) -> np.ndarray:
    """Closed-form optimal share holdings at given states, vectorized.

    Parameters are aligned arrays over evaluation points: regime labels,
    prices (m, d), density values (m,), running occupations (N, m).
    """
    u = market.utility
    beta = market.betas
    x0 = market.model.x0
    if u.kind == "log":
        factor = -x0 / density
    elif u.kind == "power":
        gamma = u.gamma
        factor = (x0 * (gamma - 1.0) * density ** (gamma - 1.0)
                  * np.exp(market.rates.hellinger @ occupation))
    else:
        factor = -np.ones(np.shape(labels)[0])
    return factor[:, None] * beta[labels] / prices


def optimal_fractions(market: MarketSolution, labels: np.ndarray) -> np.ndarray:
    """Optimal monetary fractions (log, power) or amounts (exponential) per regime."""
    u = market.utility
    beta = market.betas
    if u.kind == "log":
        return -beta[labels]
    if u.kind == "power":
        return (u.gamma - 1.0) * beta[labels]
    return -beta[labels]


def strategy_wealth(spec: StrategySpec, market: MarketSolution, bundle: PathBundle,
                    prices: np.ndarray, density: Optional[np.ndarray],
                    occupation: Optional[np.ndarray], coarsen: int = 1):
    """Wealth path of one strategy on one simulated bundle.

    Returns ``(wealth, gain_floor, breached)``.  Positions are restated
    at the rebalance dates implied by ``coarsen`` and held in between;
    regime switches and jump events are always rebalance dates.
    """
    model = market.model
    x0 = model.x0
    m = bundle.n_steps
    if spec.kind == "zero":
        return np.full(m + 1, x0), 0.0, False
    reb = bundle.rebalance_steps(coarsen)
    if spec.kind == "optimal":
        dens = density[:-1] if density is not None else None
        occ = occupation[:, :-1] if occupation is not None else None
        shares_at = optimal_shares(market, bundle.labels, prices[:-1], dens, occ)
        wealth, floor = wealth_from_shares(prices, shares_at[reb], x0)
        return wealth, floor, bool(wealth.min() <= 0.0)
    if spec.kind == "scaled-optimal":
        if market.utility.kind == "exponential":
            shares_at = -spec.rho * market.betas[bundle.labels] / prices[:-1]
            wealth, floor = wealth_from_shares(prices, shares_at[reb], x0)
            return wealth, floor, bool(wealth.min() <= 0.0)
        fr = spec.rho * optimal_fractions(market, bundle.labels)
        wealth, floor = wealth_from_fractions(prices, fr, x0, reb)
        return wealth, floor, bool(wealth.min() <= 0.0)
    # constant monetary proportions
    fr = np.broadcast_to(spec.fractions, (m, model.dim))
    wealth, floor = wealth_from_fractions(prices, fr, x0, reb)
    return wealth, floor, bool(wealth.min() <= 0.0)


def _needs_density(specs: Sequence[StrategySpec], utility: UtilitySpec) -> bool:
    return any(s.kind == "optimal" for s in specs) and utility.kind in ("log", "power")


def monte_carlo_value(market: MarketSolution, specs: Sequence[StrategySpec],
                      n_paths: int, seed: int, steps_per_unit: int = 512,
                      workers: int = 1, coarsen: int = 1, return_table: bool = False):
    """Estimate E[u(V_T)] for several strategies on common random paths.

    One simulation pass drives every strategy (common random numbers),
    so differences between strategies carry far less Monte Carlo noise
    than the individual estimates.  Deterministic for a given seed
    regardless of ``workers``.  With ``return_table`` the raw per-path
    outputs come back too (columns: u, floor, breach per strategy).
    """
    if n_paths < 2:
        raise ValueError("need at least 2 paths for a standard error")
    model, utility = market.model, market.utility
    coeffs = DensityCoefficients.build(model, market.solutions)
    arrays = ModelArrays.build(model)
    want_density = _needs_density(specs, utility)
    want_occ = any(s.kind == "optimal" for s in specs) and utility.kind == "power"

    def per_path(bundle: PathBundle) -> np.ndarray:
        prices = price_paths(bundle, model, arrays)
        density = density_path(bundle, coeffs) if want_density else None
        occ = bundle.occupation_running(model.n_regimes) if want_occ else None
        row = np.empty(3 * len(specs))
        for i, spec in enumerate(specs):
            wealth, floor, breached = strategy_wealth(
                spec, market, bundle, prices, density, occ, coarsen)
            row[3 * i] = utility.evaluate(wealth[-1])
            row[3 * i + 1] = floor
            row[3 * i + 2] = 1.0 if breached else 0.0
        return row

    table = map_paths(model, n_paths, seed, steps_per_unit, per_path, workers=workers)
    base = theoretical_value(market)
    reports = []
    for i, spec in enumerate(specs):
        u_vals = table[:, 3 * i]
        floors = table[:, 3 * i + 1]
        breaches = int(table[:, 3 * i + 2].sum())
        mean = float(u_vals.mean())
        se = float(u_vals.std(ddof=1) / np.sqrt(n_paths))
        reports.append(ValueReport(
            utility=utility.label(),
            strategy=spec.label(),
            theory_value=base.theory_value if spec.kind == "optimal" else np.nan,
            lagrange_multiplier=base.lagrange_multiplier,
            mc_value=mean,
            mc_se=se,
            n_paths=n_paths,
            steps_per_unit=steps_per_unit,
            breaches=breaches,
            gain_floor=float(floors.min()),
            beta=market.betas,
            hellinger=market.rates.hellinger,
            kl=market.rates.kl,
        ))
    return reports
