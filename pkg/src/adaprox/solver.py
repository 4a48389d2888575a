"""Adaptive-sampling proximal gradient driver.

Each iteration takes a trial proximal step with the current batch, asks the
configured rule how large the batch should be, and, if it must grow, draws
only the missing samples and recomputes the step from the enlarged batch::

    gbar  = mean of S component gradients at x
    xbar  = prox(x - alpha gbar)
    S_k   = next_batch_size(rule(...), S, cap)
    x+    = prox(x - alpha g)   with g over S_k samples, or xbar if S_k == S
    S     = S_k
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import controllers as ctl
from .exceptions import ConfigError, NumericalFailure, ReferenceDivergence
from .problems import exact_phi
from .prox import ProxFunction
from .sampling import augment, estimate, full_estimate, rng_stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    ``alpha`` is a positive number or ``"theory"`` for ``(1 - eta)/L``
    (``eta`` of the norm/oracle rules, or ``2(1-beta)^2`` for IP).
    ``max_iter`` is an extra iteration bound on top of the epoch budget.
    ``resample_all`` re-draws the whole batch when it grows instead of
    topping it up; ``replace=False`` samples without replacement.
    """

    controller: ctl.ControllerConfig
    alpha: float | str = "theory"
    max_epochs: float = 100.0
    max_iter: int | None = None
    step_tolerance: float = 1e-8
    seed: int = 0
    record_every: int = 1
    resample_all: bool = False
    replace: bool = True
    workers: int = 1
    timing: bool = True

    def resolve_alpha(self, problem) -> float:
        if self.alpha == "theory":
            c = self.controller
            if c.kind == "geometric":
                raise ConfigError("the theoretical steplength needs an eta-based controller")
            eta = c.ip_eta if c.kind == "ip" else c.eta
            L = getattr(problem, "L", None)
            if L is None:
                raise ConfigError("the theoretical steplength needs a Lipschitz constant")
            return (1.0 - eta) / L
        alpha = float(self.alpha)
        if not alpha > 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")
        return alpha


@dataclass
class RunRecord:
    """Telemetry for iteration ``k``, which produced iterate ``x_k``.

    ``batch_size`` is the batch used for the committed step and
    ``cumulative_samples`` counts every drawn component gradient so far.
    """

    k: int
    batch_size: int
    cumulative_samples: int
    effective_gradient_evaluations: float
    phi: float
    phi_gap: float
    step_norm_over_alpha: float
    trial_step_norm_over_alpha: float
    resampled: bool
    capped: bool
    wall_time: float
    stop_reason: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class DeterministicPath:
    x: np.ndarray
    best_x: np.ndarray
    best_phi: float
    phi: np.ndarray
    iterates: list = field(default_factory=list)


def solve(problem, h: ProxFunction, cfg: SolverConfig, x0=None, phi_star: float | None = None):
    """Run the adaptive-sampling method; returns ``(x, records)``.

    Stops when the committed (or trial) step satisfies
    ``||x+ - x|| / alpha <= cfg.step_tolerance`` (a tolerance of 0 turns this
    rule off), when the drawn samples
    reach ``cfg.max_epochs * N``, or after ``cfg.max_iter`` iterations. The
    last record carries ``stop_reason``.
    """
    d = problem.dimension
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if h.dimension != d:
        raise ValueError("h and problem dimensions differ")
    phi = exact_phi(problem, h, x)
    if not np.isfinite(phi):
        raise ValueError("x0 must be feasible (finite objective)")

    alpha = cfg.resolve_alpha(problem)
    c = cfg.controller
    N = problem.n_samples
    cap = c.cap
    if cap is None and problem.finite_sum:
        cap = N
    saturate = cap is not None and N is not None and cap >= N and problem.finite_sum
    retain = c.kind == "ip"
    gap_ref = 0.0 if phi_star is None else phi_star
    budget = None if N is None else cfg.max_epochs * N
    stop_on_step = cfg.step_tolerance > 0

    S = int(c.S0) if cap is None else min(int(c.S0), cap)
    h_x = h.evaluate(x)
    cum = 0
    records: list[RunRecord] = []
    start = time.perf_counter()
    k = 0
    while True:
        if saturate and S >= N:
            trial = full_estimate(problem, x, retain=retain, workers=cfg.workers)
        else:
            trial = estimate(problem, x, S, rng_stream(cfg.seed, k, 0), retain=retain,
                             replace=cfg.replace, workers=cfg.workers)
        cum += S
        if not np.all(np.isfinite(trial.mean)):
            raise NumericalFailure(f"non-finite gradient estimate at iteration {k}", iteration=k)
        x_bar = h.prox(alpha, x - alpha * trial.mean)
        trial_norm = float(np.linalg.norm(x_bar - x)) / alpha

        S_k, resampled = S, False
        g = trial
        # a zero trial step leaves nothing for the controller to measure; with
        # the step rule disabled the batch is simply kept
        if trial_norm == 0.0 or (stop_on_step and trial_norm <= cfg.step_tolerance):
            x_new = x_bar
        else:
            h_trial = h.evaluate_prox_output(x_bar)
            ctx = ctl.StepContext(x, trial, x_bar, alpha, h_x, h_trial, k, S)
            raw = ctl.evaluate(c, ctx, problem, h)
            S_k = ctl.next_batch_size(raw, S, cap)
            if S_k > S:
                resampled = True
                if saturate and S_k >= N:
                    g = full_estimate(problem, x, retain=False, workers=cfg.workers)
                    cum += S_k - S
                elif cfg.resample_all:
                    g = estimate(problem, x, S_k, rng_stream(cfg.seed, k, 1), replace=cfg.replace,
                                 workers=cfg.workers)
                    cum += S_k
                else:
                    g = augment(trial, problem, x, S_k, rng_stream(cfg.seed, k, 1),
                                replace=cfg.replace, workers=cfg.workers)
                    cum += S_k - S
                if not np.all(np.isfinite(g.mean)):
                    raise NumericalFailure(f"non-finite gradient estimate at iteration {k}", iteration=k)
                x_new = h.prox(alpha, x - alpha * g.mean)
            else:
                x_new = x_bar

        step_norm = float(np.linalg.norm(x_new - x)) / alpha
        x = x_new
        S = S_k
        h_x = h.evaluate_prox_output(x)
        k += 1

        reason = None
        if stop_on_step and (step_norm <= cfg.step_tolerance or trial_norm <= cfg.step_tolerance):
            reason = "step_tolerance"
        elif budget is not None and cum >= budget:
            reason = "max_epochs"
        elif cfg.max_iter is not None and k >= cfg.max_iter:
            reason = "max_iter"

        if reason is not None or k % cfg.record_every == 0:
            phi = problem.value(x) + h_x
            if not np.isfinite(phi):
                raise NumericalFailure(f"objective is not finite at iteration {k}", iteration=k)
            records.append(RunRecord(
                k=k,
                batch_size=S_k,
                cumulative_samples=cum,
                effective_gradient_evaluations=cum / N if N else float(cum),
                phi=phi,
                phi_gap=phi - gap_ref if phi_star is not None else math.nan,
                step_norm_over_alpha=step_norm,
                trial_step_norm_over_alpha=trial_norm,
                resampled=resampled,
                capped=cap is not None and S_k >= cap,
                wall_time=time.perf_counter() - start if cfg.timing else math.nan,
                stop_reason=reason,
            ))
        if reason is not None:
            log.debug("stopped after %d iterations: %s", k, reason)
            return x, records


def solve_deterministic(problem, h: ProxFunction, alpha: float, iters: int, x0=None,
                        keep_iterates: bool = False, divergence_window: int | None = None):
    """Plain proximal gradient ``x <- prox(x - alpha grad f(x))`` for ``iters`` steps.

    With ``divergence_window`` set, raises :class:`ReferenceDivergence` once
    the objective has increased that many iterations in a row.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x = np.zeros(problem.dimension) if x0 is None else np.array(x0, dtype=float)
    phi = exact_phi(problem, h, x)
    if not np.isfinite(phi):
        raise ValueError("x0 must be feasible (finite objective)")
    phis = np.empty(iters + 1)
    phis[0] = phi
    best_x, best_phi = x.copy(), phi
    iterates = [x.copy()] if keep_iterates else []
    rising = 0
    for k in range(1, iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            g = problem.gradient(x)
            if np.all(np.isfinite(g)):
                x = h.prox(alpha, x - alpha * g)
                phi_new = problem.value(x) + h.evaluate_prox_output(x)
            else:
                phi_new = math.nan
        if not np.isfinite(phi_new):
            msg = f"objective is not finite at iteration {k}"
            if divergence_window is not None:
                raise ReferenceDivergence(f"{msg}; try a smaller steplength than {alpha:g}", iteration=k)
            raise NumericalFailure(msg, iteration=k)
        rising = rising + 1 if phi_new > phi else 0
        if divergence_window is not None and rising >= divergence_window:
            raise ReferenceDivergence(
                f"objective increased for {rising} consecutive iterations (at {k}); "
                f"try a smaller steplength than {alpha:g}", iteration=k)
        phi = phi_new
        phis[k] = phi
        if phi < best_phi:
            best_x, best_phi = x.copy(), phi
        if keep_iterates:
            iterates.append(x.copy())
    return DeterministicPath(x, best_x, best_phi, phis, iterates)
