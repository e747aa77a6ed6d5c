"""Gaussian-process regression with a Matern-5/2 ARD kernel.

Inputs are expected in the unit cube; outputs are standardized internally.
Kernel hyper-parameters (per-dimension length-scales and signal variance) are
fit by marginal-likelihood ascent with L-BFGS-B from a fixed starting point,
so fits are deterministic. A small fixed nugget keeps the Cholesky stable
while preserving near-interpolation of noise-free observations.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, optimize

from .errors import TaskStreamError

JITTER = 1e-8
SQRT5 = np.sqrt(5.0)


class GPFitError(TaskStreamError):
    """The GP could not be fit (degenerate inputs, Cholesky failure)."""


def _matern52(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray, signal: float) -> np.ndarray:
    diff = x1[:, None, :] - x2[None, :, :]
    r = np.sqrt(np.maximum(((diff / lengthscales) ** 2).sum(-1), 0.0))
    sr = SQRT5 * r
    return signal * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


class MaternGP:
    def __init__(self, lengthscale_bounds: tuple[float, float] = (0.05, 10.0)):
        self.lengthscale_bounds = lengthscale_bounds
        self._fitted = False

    def fit(self, x: np.ndarray, y: np.ndarray) -> "MaternGP":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if x.ndim != 2 or len(x) != len(y):
            raise GPFitError("GP fit needs matching 2-D inputs and 1-D outputs")
        if len(x) < 2:
            raise GPFitError("GP fit needs at least two observations")
        self.x = x
        self.y_mean = float(y.mean())
        self.y_std = float(y.std())
        if self.y_std < 1e-12:
            self.y_std = 1.0
        self.y = (y - self.y_mean) / self.y_std

        n, d = x.shape
        lo, hi = self.lengthscale_bounds
        bounds = [(np.log(lo), np.log(hi))] * d + [(np.log(1e-3), np.log(1e3))]

        def nll(theta: np.ndarray) -> float:
            ls = np.exp(theta[:d])
            sig = np.exp(theta[d])
            k = _matern52(x, x, ls, sig) + JITTER * np.eye(n)
            try:
                chol = linalg.cholesky(k, lower=True)
            except linalg.LinAlgError:
                return 1e12
            alpha = linalg.solve_triangular(chol, self.y, lower=True)
            return float(
                0.5 * alpha @ alpha + np.log(np.diag(chol)).sum() + 0.5 * n * np.log(2 * np.pi)
            )

        start = np.concatenate([np.full(d, np.log(0.5)), [0.0]])
        result = optimize.minimize(nll, start, method="L-BFGS-B", bounds=bounds)
        theta = result.x if np.isfinite(result.fun) else start
        self.lengthscales = np.exp(theta[:d])
        self.signal = float(np.exp(theta[d]))

        k = _matern52(x, x, self.lengthscales, self.signal) + JITTER * np.eye(n)
        try:
            self._chol = linalg.cholesky(k, lower=True)
        except linalg.LinAlgError as exc:
            raise GPFitError(f"Cholesky factorization failed: {exc}") from exc
        self._alpha = linalg.cho_solve((self._chol, True), self.y)
        self._fitted = True
        return self

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at the query points."""
        if not self._fitted:
            raise GPFitError("predict called before fit")
        xs = np.asarray(xs, dtype=np.float64)
        ks = _matern52(xs, self.x, self.lengthscales, self.signal)
        mean = ks @ self._alpha
        v = linalg.solve_triangular(self._chol, ks.T, lower=True)
        var = np.maximum(self.signal - (v * v).sum(axis=0), 1e-16)
        return mean * self.y_std + self.y_mean, np.sqrt(var) * self.y_std
