"""Market model data types: one Levy triplet per regime plus the switching chain.

A regime is a d-dimensional Levy process described by its triplet
(drift b, diffusion c = sigma^T sigma, jump measure nu).  Jumps are
finite-activity compound Poisson with finitely many atoms, so every
jump integral below is an exact finite sum.  The truncation function in
the Levy-Khinchin exponent is the indicator of the closed unit ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


class ModelValidationError(ValueError):
    """Raised when a model fails its structural invariants."""

    def __init__(self, issues: List[str]):
        super().__init__("; ".join(issues))
        self.issues = issues


@dataclass
class JumpSpec:
    """Compound-Poisson jump component: intensity and a finite list of marks.

    The jump measure is ``nu(dx) = intensity * sum_i probs[i] * delta_{atoms[i]}``.
    Every atom component must exceed -1 so that Doleans-Dade prices stay
    strictly positive.
    """

    intensity: float
    atoms: np.ndarray  # (n_atoms, d)
    probs: np.ndarray  # (n_atoms,)

    def __post_init__(self):
        self.intensity = float(self.intensity)
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.probs = np.atleast_1d(np.asarray(self.probs, dtype=float))

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def validate(self, dim: int, where: str = "jumps") -> List[str]:
        issues = []
        if not np.isfinite(self.intensity) or self.intensity < 0.0:
            issues.append(f"{where}: intensity must be finite and >= 0, got {self.intensity}")
        if self.atoms.ndim != 2 or self.atoms.shape[1] != dim:
            issues.append(f"{where}: atoms must have shape (n, {dim}), got {self.atoms.shape}")
            return issues
        if self.probs.shape != (self.atoms.shape[0],):
            issues.append(f"{where}: need one probability per atom")
            return issues
        if not np.all(np.isfinite(self.atoms)):
            issues.append(f"{where}: atoms must be finite")
        if np.any(self.probs <= 0.0):
            issues.append(f"{where}: atom probabilities must be strictly positive")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            issues.append(f"{where}: atom probabilities must sum to 1, got {self.probs.sum()!r}")
        if np.any(self.atoms <= -1.0):
            issues.append(f"{where}: every atom component must be > -1 (price positivity)")
        uniq = {tuple(row) for row in self.atoms}
        if len(uniq) != self.atoms.shape[0]:
            issues.append(f"{where}: atoms must be distinct")
        return issues


@dataclass
class LevyTriplet:
    """One regime: drift ``b``, volatility matrix ``sigma``, optional jumps.

    ``sigma`` is stored (rather than c) so that simulation and
    ``c = sigma^T sigma`` are consistent by construction.
    """

    drift: np.ndarray   # (d,)
    sigma: np.ndarray   # (d, d)
    jumps: Optional[JumpSpec] = None

    def __post_init__(self):
        self.drift = np.atleast_1d(np.asarray(self.drift, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))

    @property
    def dim(self) -> int:
        return self.drift.size

    @property
    def covariance(self) -> np.ndarray:
        """Diffusion matrix c = sigma^T sigma."""
        return self.sigma.T @ self.sigma

    def has_jumps(self) -> bool:
        return self.jumps is not None and self.jumps.intensity > 0.0 and self.jumps.n_atoms > 0

    def jump_terms(self):
        """Per-atom rates and atoms: (rates_i, x_i) with rates_i = intensity*p_i.

        Returns empty arrays for a pure-diffusion regime.
        """
        if not self.has_jumps():
            return np.zeros(0), np.zeros((0, self.dim))
        return self.jumps.intensity * self.jumps.probs, self.jumps.atoms

    def char_exponent(self, lam: np.ndarray) -> complex:
        """Levy-Khinchin characteristic exponent at frequency ``lam``.

        E[exp(i <lam, X_t>)] = exp(t * psi(lam)), with jump compensation
        applied to atoms inside the closed unit ball.
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if lam.shape != (self.dim,):
            raise ValueError(f"frequency must have shape ({self.dim},)")
        if not np.all(np.isfinite(lam)):
            raise ValueError("frequency must be finite")
        c = self.covariance
        val = 1j * np.dot(lam, self.drift) - 0.5 * np.dot(lam, c @ lam)
        rates, atoms = self.jump_terms()
        for rate, x in zip(rates, atoms):
            u = np.dot(lam, x)
            term = np.exp(1j * u) - 1.0
            if np.linalg.norm(x) <= 1.0:
                term -= 1j * u
            val += rate * term
        return complex(val)

    def mean_rate(self) -> np.ndarray:
        """Expected increment per unit time: a = b + integral of x over big jumps.

        This is the drift in the martingale decomposition X_t = a t + M_t.
        """
        a = self.drift.copy()
        rates, atoms = self.jump_terms()
        for rate, x in zip(rates, atoms):
            if np.linalg.norm(x) > 1.0:
                a += rate * x
        return a

    def linear_drift(self) -> np.ndarray:
        """Drift of the continuous motion between jump events.

        Removes the small-jump compensator from ``b``: with finite
        activity, X_t = linear_drift*t + sigma W_t + sum of jumps.
        """
        b0 = self.drift.copy()
        rates, atoms = self.jump_terms()
        for rate, x in zip(rates, atoms):
            if np.linalg.norm(x) <= 1.0:
                b0 -= rate * x
        return b0

    def validate(self, where: str = "regime") -> List[str]:
        issues = []
        d = self.dim
        if self.sigma.shape != (d, d):
            issues.append(f"{where}: sigma must be {d}x{d}, got {self.sigma.shape}")
            return issues
        if not np.all(np.isfinite(self.drift)) or not np.all(np.isfinite(self.sigma)):
            issues.append(f"{where}: drift and sigma must be finite")
        if self.jumps is not None:
            issues.extend(self.jumps.validate(d, where=f"{where}.jumps"))
        return issues

    def diffusion_invertible(self) -> bool:
        c = self.covariance
        try:
            eig = np.linalg.eigvalsh(c)
        except np.linalg.LinAlgError:
            return False
        return bool(eig.min() > 1e-12 * max(1.0, eig.max()))


def is_generator(q: np.ndarray, tol: float = 1e-10) -> List[str]:
    """Check that q is a CTMC generator: off-diagonal >= 0, rows sum to 0."""
    issues = []
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        return [f"generator must be square, got shape {q.shape}"]
    if not np.all(np.isfinite(q)):
        issues.append("generator entries must be finite")
        return issues
    off = q - np.diag(np.diag(q))
    if np.any(off < -tol):
        issues.append("generator off-diagonal entries must be >= 0")
    bad = np.abs(q.sum(axis=1)) > tol * max(1.0, np.abs(q).max())
    for i in np.nonzero(bad)[0]:
        issues.append(f"generator row {i + 1} sums to {q[i].sum()!r}, expected 0")
    return issues


@dataclass
class SwitchingModel:
    """N regimes driven by a continuous-time Markov chain.

    The switching process X follows regime j's dynamics while the chain
    sits in state j; asset prices are the Doleans-Dade exponentials of
    the components of X, started at ``s0``.
    """

    regimes: List[LevyTriplet]
    generator: np.ndarray            # (N, N)
    initial_state: int = 0           # 0-based chain state at time 0
    horizon: float = 1.0
    s0: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    x0: float = 1.0

    def __post_init__(self):
        self.generator = np.atleast_2d(np.asarray(self.generator, dtype=float))
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        self.initial_state = int(self.initial_state)
        self.horizon = float(self.horizon)
        self.x0 = float(self.x0)

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def dim(self) -> int:
        return self.regimes[0].dim if self.regimes else 0

    def validate(self) -> List[str]:
        """Structural diagnostics; empty list means the model is valid.

        Also notes which regimes lack an invertible diffusion matrix,
        since the optimal-strategy formulas require one.
        """
        issues = []
        if not self.regimes:
            return ["model must declare at least one regime"]
        d = self.dim
        for i, reg in enumerate(self.regimes):
            if reg.dim != d:
                issues.append(f"regime {i + 1}: dimension {reg.dim} != {d} of regime 1")
                continue
            issues.extend(reg.validate(where=f"regime {i + 1}"))
        issues.extend(is_generator(self.generator))
        if self.generator.shape[0] != self.n_regimes:
            issues.append(
                f"generator is {self.generator.shape[0]}x{self.generator.shape[1]} "
                f"but the model has {self.n_regimes} regimes"
            )
        if not 0 <= self.initial_state < self.n_regimes:
            issues.append(f"initial state {self.initial_state} outside 0..{self.n_regimes - 1}")
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            issues.append(f"horizon must be > 0, got {self.horizon}")
        if self.s0.shape != (d,):
            issues.append(f"s0 must have shape ({d},), got {self.s0.shape}")
        elif np.any(~np.isfinite(self.s0)) or np.any(self.s0 <= 0.0):
            issues.append("initial prices must be finite and > 0 componentwise")
        if not np.isfinite(self.x0):
            issues.append("initial capital must be finite")
        return issues

    def strategy_features(self) -> List[str]:
        """Regimes whose diffusion matrix is not invertible (strategies unavailable)."""
        return [
            f"regime {i + 1}: diffusion matrix not invertible; "
            "closed-form optimal strategies unavailable"
            for i, reg in enumerate(self.regimes)
            if not reg.diffusion_invertible()
        ]

    def require_valid(self) -> None:
        issues = self.validate()
        if issues:
            raise ModelValidationError(issues)
