"""Batch-size rules.

Each rule returns a real-valued requirement ``a``; :func:`next_batch_size`
turns it into the next integer batch size ``S_k = min(cap, max(ceil(a), S))``.

========== ===================================================================
NORM       sample variance / ((eta/2) ||(xbar - x)/alpha||^2)
IP         directional variance along dbar / ((1-beta)^2 D^2),
           D = gbar^T dbar + h(xbar) - h(x)
GEOMETRIC  ceil(S0 (1 + gamma)^k), independent of the observed gradients
ORACLE     smallest S with popvar / S <= (eta/2) ||(E[x+] - x)/alpha||^2,
           computed from exact quantities (pool problems only)
========== ===================================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigError, DegenerateStepError, UnsupportedError
from .sampling import GradientEstimate, sample_variance_directional, sample_variance_total

CONTROLLER_KINDS = ("norm", "ip", "geometric", "oracle")


@dataclass(frozen=True)
class ControllerConfig:
    """Batch-size rule and its parameters.

    ``eta`` is used by ``norm`` and ``oracle``; ``beta`` by ``ip``;
    ``gamma`` by ``geometric``. ``S0`` is the initial batch size for all
    kinds. ``cap=None`` lets the solver pick its default (``N`` for finite
    sums, unbounded otherwise).
    """

    kind: str
    eta: float = 0.9
    beta: float = 0.9
    gamma: float = 0.1
    S0: int = 2
    cap: int | None = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {self.kind!r}; choose from {CONTROLLER_KINDS}")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if int(self.S0) != self.S0 or self.S0 < 2:
            raise ConfigError(f"S0 must be an integer >= 2, got {self.S0}")
        if self.cap is not None and self.cap < 1:
            raise ConfigError("cap must be positive")

    @classmethod
    def ip_from_eta(cls, eta: float, **kw) -> "ControllerConfig":
        """IP rule parameterised like the norm test: ``eta = 2 (1 - beta)^2``."""
        if not 0.0 < eta < 2.0:
            raise ConfigError("eta must lie in (0, 2) to map onto beta in (0, 1)")
        return cls("ip", beta=1.0 - math.sqrt(eta / 2.0), **kw)

    @property
    def ip_eta(self) -> float:
        return 2.0 * (1.0 - self.beta) ** 2

    @property
    def label(self) -> str:
        if self.kind == "geometric":
            return f"GEOMETRIC γ={self.gamma:g}"
        if self.kind == "ip":
            return f"IP β={self.beta:g}"
        return f"{self.kind.upper()} η={self.eta:g}"

    def metadata(self) -> dict:
        out = {"controller": self.kind.upper(), "S0": self.S0, "cap": self.cap,
               "eta": None, "beta": None, "gamma": None}
        if self.kind in ("norm", "oracle"):
            out["eta"] = self.eta
        elif self.kind == "ip":
            out["beta"] = self.beta
            out["eta"] = self.ip_eta
        else:
            out["gamma"] = self.gamma
        return out


@dataclass(frozen=True, eq=False)
class StepContext:
    """What a rule sees after the trial step of an iteration."""

    x: np.ndarray
    trial: GradientEstimate
    trial_x: np.ndarray
    alpha: float
    h_x: float
    h_trial: float
    k: int
    S: int

    @property
    def direction(self) -> np.ndarray:
        """``dbar = (xbar - x) / alpha``."""
        return (self.trial_x - self.x) / self.alpha


def required_batch_norm(ctx: StepContext, eta: float) -> float:
    d = ctx.direction
    denom = 0.5 * eta * float(d @ d)
    if denom == 0.0:
        raise DegenerateStepError("trial step is zero; check termination before the controller")
    return sample_variance_total(ctx.trial) / denom


def required_batch_ip(ctx: StepContext, beta: float) -> float:
    d = ctx.direction
    D = float(ctx.trial.mean @ d) + ctx.h_trial - ctx.h_x
    if abs(D) < 1e-14 * (1.0 + abs(ctx.h_x)):
        raise DegenerateStepError("trial step gives no model decrease")
    if D >= 0.0:
        # no predicted decrease: the estimate is unreliable, ask for the cap
        return math.inf
    return sample_variance_directional(ctx.trial, d) / ((1.0 - beta) ** 2 * D * D)


def required_batch_geometric(k: int, S0: int, gamma: float) -> int:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    v = S0 * (1.0 + gamma) ** k
    # absorb rounding error when the exact value is an integer
    return int(math.ceil(v - 1e-9 * max(1.0, v)))


def next_batch_size(raw: float, S: int, cap: int | None = None) -> int:
    if not raw >= 0.0:
        raise ValueError(f"batch requirement must be nonnegative, got {raw}")
    if math.isinf(raw):
        if cap is None:
            raise DegenerateStepError("unbounded batch requirement and no cap")
        return int(cap)
    S_k = max(int(math.ceil(raw)), int(S))
    if cap is not None:
        S_k = min(S_k, int(cap))
    return S_k


def evaluate(cfg: ControllerConfig, ctx: StepContext, problem=None, h=None) -> float:
    """Dispatch to the rule named by ``cfg.kind``."""
    if cfg.kind == "norm":
        return required_batch_norm(ctx, cfg.eta)
    if cfg.kind == "ip":
        return required_batch_ip(ctx, cfg.beta)
    if cfg.kind == "geometric":
        return float(required_batch_geometric(ctx.k, cfg.S0, cfg.gamma))
    return float(required_batch_oracle(problem, ctx.x, h, ctx.alpha, cfg.eta, seed=ctx.k))


# ---------------------------------------------------------------------------
# exact-variance rule


def _n_multisets(m: int, S: int) -> float:
    return math.exp(gammaln(m + S) - gammaln(S + 1) - gammaln(m))


def _compositions(m: int, S: int):
    """All count vectors ``c`` with ``sum(c) = S`` over ``m`` pool entries, with probabilities."""
    # stars and bars: choose positions of m-1 bars among S+m-1 slots
    from itertools import combinations

    rows = []
    for bars in combinations(range(S + m - 1), m - 1):
        edges = (-1,) + bars + (S + m - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(m)])
    counts = np.array(rows, dtype=float)
    logw = gammaln(S + 1) - gammaln(counts + 1).sum(axis=1) - S * math.log(m)
    return counts, np.exp(logw)


def expected_next_iterate(problem, x, h, alpha: float, S: int, mc_draws: int = 100_000,
                          enum_limit: int = 20_000, seed: int = 0) -> np.ndarray:
    """``E[prox(x - alpha g)]`` for ``g`` the mean of ``S`` i.i.d. pool gradients.

    Exact enumeration over multisets when there are at most ``enum_limit``
    of them, Monte Carlo with ``mc_draws`` draws otherwise.
    """
    x = np.asarray(x, dtype=float)
    grad = problem.gradient(x)
    noise = problem.noise
    m = noise.shape[0]
    if h.is_zero:
        return x - alpha * grad
    if _n_multisets(m, S) <= enum_limit:
        counts, w = _compositions(m, S)
        G = grad + counts @ noise / S
        Z = x - alpha * G
        P = np.array([h.prox(alpha, z) for z in Z])
        return w @ P
    rng = np.random.default_rng([seed, S])
    acc = np.zeros_like(x)
    done = 0
    block = max(1, min(mc_draws, 2_000_000 // max(S, 1)))
    while done < mc_draws:
        n = min(block, mc_draws - done)
        ids = rng.integers(0, m, size=(n, S))
        G = grad + noise[ids].mean(axis=1)
        Z = x - alpha * G
        acc += _prox_rows(h, alpha, Z).sum(axis=0)
        done += n
    return acc / mc_draws


def _prox_rows(h, alpha, Z):
    if h.kind == "halfspace":
        viol = np.maximum(Z @ h.a - h.b, 0.0)
        return Z - np.outer(viol, h.a) / float(h.a @ h.a)
    if h.kind == "nonneg":
        return np.maximum(Z, 0.0)
    if h.kind == "box":
        return np.clip(Z, h.lo, h.hi)
    if h.kind == "l1":
        t = alpha * h.weight
        return np.sign(Z) * np.maximum(np.abs(Z) - t, 0.0)
    return Z


def required_batch_oracle(problem, x, h, alpha: float, eta: float, mc_draws: int = 100_000,
                          enum_limit: int = 20_000, seed: int = 0, max_batch: int = 2**40) -> int:
    """Smallest ``S`` satisfying the exact-variance condition at ``x``.

    Needs a problem with a finite noise pool. With ``h`` zero the expected
    step is ``-alpha grad f`` and the answer has a closed form; otherwise
    the expected next iterate is enumerated (or simulated) per candidate
    ``S``, found by doubling then bisection. The bisection assumes the
    condition, once met, stays met for larger ``S``.
    """
    if not hasattr(problem, "noise"):
        raise UnsupportedError("exact-variance rule needs a pool problem")
    x = np.asarray(x, dtype=float)
    popvar = problem.population_variance(x)
    if popvar == 0.0:
        return 1
    if h.is_zero:
        g = problem.gradient(x)
        denom = 0.5 * eta * float(g @ g)
        if denom == 0.0:
            return max_batch
        return max(1, int(math.ceil(popvar / denom * (1 - 1e-12))))

    def ok(S):
        ex = expected_next_iterate(problem, x, h, alpha, S, mc_draws, enum_limit, seed)
        d = (ex - x) / alpha
        return popvar / S <= 0.5 * eta * float(d @ d)

    if ok(1):
        return 1
    lo, hi = 1, 2
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > max_batch:
            return max_batch
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
