"""Stochastic objectives ``f(x) = E_theta[F(x, theta)]`` with per-sample access.

Two concrete families are provided:

* :class:`LogisticL1Instance` -- the finite-sum logistic loss of a binary
  dataset, paired with the L1 term ``lambda * ||x||_1``;
* :class:`PoolQuadratic` -- ``0.5 x^T Q x + b^T x`` whose per-sample gradients
  are the exact gradient plus one vector from a finite, mean-centred noise
  pool. The population variance is then known exactly, which the
  verification harness relies on.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import prox as proxmod
from .exceptions import DegenerateDataError
from .sampling import GradientEstimate
from .sampling import batch_gradient as _batch_gradient


class StochasticProblem:
    """Interface shared by the problem families.

    Subclasses set ``dimension`` and ``n_samples`` (``None`` for a
    continuous sample space) and implement the vectorised
    ``component_gradients``/``component_values`` plus ``value``/``gradient``.
    """

    dimension: int
    n_samples: int | None
    finite_sum: bool = False

    def component_gradients(self, x, ids) -> np.ndarray:
        raise NotImplementedError

    def component_values(self, x, ids) -> np.ndarray:
        raise NotImplementedError

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def component_gradient(self, x, sample_id) -> np.ndarray:
        return self.component_gradients(x, np.array([sample_id]))[0]

    def component_value(self, x, sample_id) -> float:
        return float(self.component_values(x, np.array([sample_id]))[0])

    def default_h(self) -> proxmod.ProxFunction:
        return proxmod.zero(self.dimension)

    def population_variance(self, x) -> float:
        """``E||grad F(x, theta) - grad f(x)||^2`` by full enumeration."""
        if self.n_samples is None:
            raise NotImplementedError("population variance needs a finite sample space")
        G = self.component_gradients(x, np.arange(self.n_samples))
        dev = G - self.gradient(x)
        return float((dev**2).sum() / self.n_samples)

    def describe(self) -> dict:
        return {"type": type(self).__name__, "dimension": self.dimension, "n_samples": self.n_samples}

    def _vec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"x has shape {x.shape}, expected ({self.dimension},)")
        return x


class LogisticL1Instance(StochasticProblem):
    """Average logistic loss ``(1/N) sum_i log(1 + exp(-y_i z_i^T x))``.

    Parameters
    ----------
    features : array or sparse matrix, shape (N, d)
    labels : array of +1/-1, shape (N,)
    lam : float, optional
        L1 weight used by :meth:`default_h`. Defaults to ``1/N``.
    """

    finite_sum = True

    def __init__(self, features, labels, lam: float | None = None, name: str = "logistic"):
        Z = sp.csr_matrix(features, dtype=float) if not sp.issparse(features) else features.tocsr().astype(float)
        y = np.asarray(labels, dtype=float).ravel()
        if Z.shape[0] != y.size:
            raise ValueError("features and labels disagree on the number of samples")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.Z = Z
        self.y = y
        self.n_samples, self.dimension = Z.shape
        self.lam = 1.0 / self.n_samples if lam is None else float(lam)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.name = name
        self._L = None

    @classmethod
    def from_dataset(cls, ds, lam: float | None = None):
        return cls(ds.features, ds.labels, lam=lam, name=ds.name)

    def default_h(self):
        return proxmod.l1(self.lam, self.dimension)

    def margins(self, x, ids=None) -> np.ndarray:
        Z = self.Z if ids is None else self.Z[ids]
        y = self.y if ids is None else self.y[ids]
        return y * (Z @ x)

    def component_values(self, x, ids):
        x = self._vec(x)
        # log(1 + e^{-t}) without overflow
        return np.logaddexp(0.0, -self.margins(x, ids))

    def component_gradients(self, x, ids):
        x = self._vec(x)
        ids = np.asarray(ids, dtype=np.int64)
        coef = -self.y[ids] * expit(-self.margins(x, ids))
        rows = self.Z[ids]
        return np.asarray(rows.multiply(coef[:, None]).todense())

    def value(self, x):
        x = self._vec(x)
        return float(np.logaddexp(0.0, -self.margins(x)).mean())

    def gradient(self, x):
        x = self._vec(x)
        coef = -self.y * expit(-self.margins(x))
        return np.asarray(self.Z.T @ coef).ravel() / self.n_samples

    @property
    def L(self) -> float:
        if self._L is None:
            self._L = lipschitz_estimate(self)
        return self._L

    def describe(self):
        out = super().describe()
        out.update(name=self.name, lam=self.lam)
        return out


class PoolQuadratic(StochasticProblem):
    """``f(x) = 0.5 x^T Q x + b^T x`` with component ``F_i = f + noise_i^T x``.

    ``noise`` is an (m, d) array; it is re-centred so its rows average to
    zero, making the full-pool average of component gradients exact.
    ``constraint`` is an optional normal ``a`` of the halfspace ``a^T x <= 0``
    returned by :meth:`default_h`.
    """

    def __init__(self, Q, b, noise, constraint=None):
        Q = np.asarray(Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        b = np.asarray(b, dtype=float).ravel()
        noise = np.atleast_2d(np.asarray(noise, dtype=float))
        d = b.size
        if Q.shape != (d, d) or noise.shape[1] != d:
            raise ValueError("inconsistent shapes for Q, b, noise")
        eig = np.linalg.eigvalsh(Q)
        if eig[0] < -1e-12 * max(1.0, abs(eig[-1])):
            raise ValueError("Q must be positive semidefinite")
        self.Q = Q
        self.b = b
        self.noise = noise - noise.mean(axis=0)
        self.dimension = d
        self.n_samples = noise.shape[0]
        self.mu = max(float(eig[0]), 0.0)
        self.L = float(eig[-1])
        self.constraint = None if constraint is None else np.asarray(constraint, dtype=float).ravel()

    def default_h(self):
        if self.constraint is None:
            return proxmod.zero(self.dimension)
        return proxmod.halfspace(self.constraint, 0.0)

    def component_values(self, x, ids):
        x = self._vec(x)
        return self.value(x) + self.noise[np.asarray(ids)] @ x

    def component_gradients(self, x, ids):
        x = self._vec(x)
        return self.gradient(x) + self.noise[np.asarray(ids)]

    def value(self, x):
        x = self._vec(x)
        return float(0.5 * x @ self.Q @ x + self.b @ x)

    def gradient(self, x):
        x = self._vec(x)
        return self.Q @ x + self.b

    def population_variance(self, x=None) -> float:
        return float((self.noise**2).sum(axis=1).mean())

    def minimizer(self) -> np.ndarray:
        """Minimum-norm unconstrained minimiser (requires ``b`` in the range of ``Q``)."""
        x = -np.linalg.pinv(self.Q) @ self.b
        if not np.allclose(self.Q @ x + self.b, 0.0, atol=1e-9 * (1 + np.linalg.norm(self.b))):
            raise ValueError("f is unbounded below: b is not in the range of Q")
        return x

    def describe(self):
        out = super().describe()
        out.update(mu=self.mu, L=self.L, pool_variance=self.population_variance(),
                   constrained=self.constraint is not None)
        return out


def make_pool_quadratic(
    dimension: int,
    mu: float,
    L: float,
    sigma: float,
    pool_size: int | None = None,
    seed: int = 0,
    singular: int = 0,
    constraint=None,
) -> PoolQuadratic:
    """Random pool quadratic with spectrum spread evenly over ``[mu, L]``.

    ``singular`` zero eigenvalues are appended (so ``mu`` then refers to the
    smallest nonzero one) and ``b`` is kept in the range of ``Q``. The noise
    pool holds ``pool_size`` (default ``10 * dimension``) Gaussian vectors with
    covariance ``sigma^2 I``, re-centred to mean zero.
    """
    rng = np.random.default_rng(seed)
    d = int(dimension)
    k = d - int(singular)
    if k < 1:
        raise ValueError("need at least one nonzero eigenvalue")
    eigs = np.concatenate([np.linspace(mu, L, k) if k > 1 else [L], np.zeros(int(singular))])
    U, _ = np.linalg.qr(rng.normal(size=(d, d)))
    Q = (U * eigs) @ U.T
    b = U[:, :k] @ rng.normal(size=k)
    m = 10 * d if pool_size is None else int(pool_size)
    noise = sigma * rng.normal(size=(m, d))
    return PoolQuadratic(Q, b, noise, constraint=constraint)


def batch_gradient(p: StochasticProblem, x, sample_ids, retain: bool = False) -> GradientEstimate:
    """Mean of the component gradients over ``sample_ids`` (see :mod:`adaprox.sampling`)."""
    return _batch_gradient(p, x, sample_ids, retain=retain)


def exact_phi(p: StochasticProblem, h: proxmod.ProxFunction, x) -> float:
    """``f(x) + h(x)``; ``inf`` if ``x`` lies outside the domain of ``h``."""
    x = p._vec(x)
    if h.dimension != p.dimension:
        raise ValueError("h and problem dimensions differ")
    hx = h.evaluate(x)
    if not np.isfinite(hx):
        return np.inf
    return p.value(x) + hx


def lipschitz_estimate(p: LogisticL1Instance, rtol: float = 1e-3, max_iter: int = 500) -> float:
    """``lambda_max(Z^T Z) / (4 N)``, a gradient Lipschitz bound for the logistic loss.

    The top eigenvalue comes from power iteration, stopped when the Rayleigh
    quotient changes by less than ``rtol`` relatively.
    """
    Z = p.Z
    if Z.nnz == 0 or not np.any(Z.data):
        raise DegenerateDataError("feature matrix is identically zero")
    v = np.random.default_rng(0).uniform(0.5, 1.5, size=p.dimension)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = Z.T @ (Z @ v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    return lam / (4.0 * p.n_samples)


def reference_solution(p: StochasticProblem, h: proxmod.ProxFunction, alpha: float, iters: int, x0=None):
    """Approximate ``(x*, phi*)`` by running deterministic proximal gradient.

    Returns the best iterate seen and its objective value.
    """
    from .solver import solve_deterministic

    path = solve_deterministic(p, h, alpha, iters, x0)
    return path.best_x, path.best_phi
