"""Norm-constrained least squares, covariance accumulation and elliptical bonuses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

RANK_TOL = 1e-12
REFACTOR_EVERY = 512


class CovarianceAccumulator:
    """``Sigma = lam I + sum phi phi^T`` with a Sherman-Morrison inverse.

    The inverse is rebuilt from scratch every ``REFACTOR_EVERY`` rank-one
    updates so rounding drift stays bounded.
    """

    def __init__(self, dim: int, lam: float):
        if dim < 1 or not lam > 0.0:
            raise ValueError("need dim >= 1 and lam > 0")
        self.dim = int(dim)
        self.lam = float(lam)
        self.sigma = lam * np.eye(dim)
        self.inv = np.eye(dim) / lam
        self.count = 0
        self._since_refactor = 0

    def copy(self) -> "CovarianceAccumulator":
        out = CovarianceAccumulator(self.dim, self.lam)
        out.sigma = self.sigma.copy()
        out.inv = self.inv.copy()
        out.count = self.count
        out._since_refactor = self._since_refactor
        return out

    def add(self, phi) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        self.sigma += np.outer(phi, phi)
        u = self.inv @ phi
        self.inv -= np.outer(u, u) / (1.0 + phi @ u)
        self.count += 1
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self.refactor()

    def add_batch(self, phis) -> None:
        phis = np.asarray(phis, dtype=np.float64).reshape(-1, self.dim)
        if phis.shape[0] == 0:
            return
        self.sigma += phis.T @ phis
        self.count += phis.shape[0]
        self.refactor()

    def refactor(self) -> None:
        self.sigma = 0.5 * (self.sigma + self.sigma.T)
        self.inv = np.linalg.inv(self.sigma)
        self.inv = 0.5 * (self.inv + self.inv.T)
        self._since_refactor = 0

    def bonus(self, phi) -> float:
        return bonus(self, phi)

    def bonuses(self, phis: np.ndarray) -> np.ndarray:
        """Row-wise ``||phi||_{Sigma^-1}`` for a ``(n, d)`` array."""
        q = np.einsum("nd,de,ne->n", phis, self.inv, phis)
        return np.sqrt(np.maximum(q, 0.0))


def bonus(acc: CovarianceAccumulator, phi) -> float:
    """``sqrt(phi^T Sigma^-1 phi)``."""
    phi = np.asarray(phi, dtype=np.float64)
    return float(np.sqrt(max(phi @ acc.inv @ phi, 0.0)))


@dataclass
class RegressionFit:
    theta: np.ndarray
    radius: float
    multiplier: float = 0.0  # KKT multiplier of the norm constraint (0 when inactive)

    def predict(self, phis) -> np.ndarray:
        return np.asarray(phis, dtype=np.float64) @ self.theta


def _ball_solve(gram: np.ndarray, rhs: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    """Minimiser of ``theta^T G theta - 2 b^T theta`` on the ball of given radius.

    Eigen-directions with eigenvalue below ``RANK_TOL`` times the largest one
    are treated as the null space, which makes the interior solution the
    minimum-norm one.
    """
    evals, evecs = np.linalg.eigh(gram)
    top = float(evals.max(initial=0.0))
    keep = evals > RANK_TOL * max(top, 1.0)
    lam, vec = evals[keep], evecs[:, keep]
    c = vec.T @ rhs
    theta = vec @ (c / lam)
    if np.linalg.norm(theta) <= radius:
        return theta, 0.0

    def excess(mu: float) -> float:
        return float(np.linalg.norm(c / (lam + mu))) - radius

    # the norm decreases monotonically in mu from above the radius at mu = 0
    hi = max(float(np.linalg.norm(c)) / radius, 1.0)
    while excess(hi) > 0.0:
        hi *= 2.0
    mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-13, maxiter=500)
    theta = vec @ (c / (lam + mu))
    # the constraint is active, so the minimiser sits exactly on the sphere
    theta *= radius / np.linalg.norm(theta)
    return theta, mu


def fit_constrained_ls(phis, targets, radius: float) -> RegressionFit:
    """Global minimiser of ``sum_j (<phi_j, theta> - y_j)^2`` over ``||theta|| <= radius``.

    Rank-deficient problems return the minimum-norm minimiser.  An empty
    dataset gives ``theta = 0``.
    """
    phis = np.asarray(phis, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    if phis.ndim != 2:
        raise ValueError("phis must be a (n, d) array")
    if not (np.all(np.isfinite(phis)) and np.all(np.isfinite(targets))):
        raise ValueError("non-finite regression inputs")
    d = phis.shape[1]
    if phis.shape[0] == 0:
        return RegressionFit(np.zeros(d), radius)
    return fit_from_moments(phis.T @ phis, phis.T @ targets, radius)


def fit_from_moments(gram: np.ndarray, rhs: np.ndarray, radius: float) -> RegressionFit:
    """Same as :func:`fit_constrained_ls` from the sufficient statistics ``(Phi^T Phi, Phi^T y)``."""
    if not np.any(rhs):
        return RegressionFit(np.zeros(rhs.size), radius)
    theta, mu = _ball_solve(np.asarray(gram, dtype=np.float64), np.asarray(rhs, dtype=np.float64), radius)
    return RegressionFit(theta, radius, mu)


def squared_loss(phis, targets, theta) -> float:
    r = np.asarray(phis) @ theta - np.asarray(targets)
    return float(r @ r)


def clip_q(x, h: int, H: int):
    """Clamp to ``[0, H + 1 - h]`` with 1-based step ``h``."""
    if not 1 <= h <= H + 1:
        raise ValueError(f"step {h} outside [1, {H + 1}]")
    return np.clip(x, 0.0, H + 1 - h)
