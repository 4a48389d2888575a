"""Mini-batch gradient estimates and their variance statistics.

An estimate carries the batch mean together with the sum of squared
deviations ``sum_i ||g_i - mean||^2`` so that the batch can later be grown
without revisiting the samples already drawn. Batches are reduced in fixed
chunks whose moments are merged in order (Chan et al. pairwise update), so
the result does not depend on how many worker threads evaluated the chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import EstimateStateError

CHUNK = 1024


def rng_stream(seed: int, iteration: int, stage: int) -> np.random.Generator:
    """Counter-based generator for one (iteration, stage) pair of a run.

    Stage 0 draws the trial batch and stage 1 draws the augmentation, so a
    run can be replayed exactly, or a single iteration re-drawn in isolation.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(iteration), int(stage)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    mean: np.ndarray
    batch_size: int
    sum_sq_dev: float
    sample_ids: np.ndarray
    gradients: np.ndarray | None = None
    full: bool = False

    @property
    def deviations(self) -> np.ndarray:
        if self.gradients is None:
            raise EstimateStateError("per-sample gradients were not retained")
        return self.gradients - self.mean


def _chunk_moments(block: np.ndarray):
    mean = block.mean(axis=0)
    m2 = float(((block - mean) ** 2).sum())
    return len(block), mean, m2


def _merge(a, b):
    na, ma, m2a = a
    nb, mb, m2b = b
    n = na + nb
    delta = mb - ma
    mean = ma + delta * (nb / n)
    m2 = m2a + m2b + float(delta @ delta) * na * nb / n
    return n, mean, m2


def _reduce(problem, x, ids, retain: bool, workers: int):
    bounds = [(i, min(i + CHUNK, len(ids))) for i in range(0, len(ids), CHUNK)]

    def work(bound):
        block = problem.component_gradients(x, ids[bound[0] : bound[1]])
        return _chunk_moments(block), (block if retain else None)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]

    moments = parts[0][0]
    for m, _ in parts[1:]:
        moments = _merge(moments, m)
    grads = np.concatenate([g for _, g in parts]) if retain else None
    return moments, grads


def draw_ids(problem, rng: np.random.Generator, size: int, replace: bool = True, exclude=None):
    """Uniform sample ids from a finite sample space.

    Without replacement, ``exclude`` lists ids already in the batch.
    """
    n = problem.n_samples
    if replace:
        return rng.integers(0, n, size=size)
    pool = np.arange(n)
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude, assume_unique=False)
    if size > len(pool):
        raise ValueError(f"cannot draw {size} new ids without replacement from {len(pool)}")
    return rng.choice(pool, size=size, replace=False)


def batch_gradient(problem, x, sample_ids, retain: bool = False, workers: int = 1) -> GradientEstimate:
    """Mean component gradient over explicitly given sample ids."""
    ids = np.asarray(sample_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("sample_ids must be nonempty")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"x has shape {x.shape}, expected ({problem.dimension},)")
    (n, mean, m2), grads = _reduce(problem, x, ids, retain, workers)
    full = problem.n_samples is not None and n == problem.n_samples and np.array_equal(
        np.sort(ids), np.arange(problem.n_samples)
    )
    return GradientEstimate(mean, int(n), max(m2, 0.0), ids, grads, full)


def estimate(
    problem,
    x,
    S: int,
    rng: np.random.Generator,
    retain: bool = False,
    replace: bool = True,
    workers: int = 1,
) -> GradientEstimate:
    """Draw ``S`` ids and return the batch estimate at ``x``."""
    if S < 2:
        raise ValueError(f"batch size must be at least 2 for a variance estimate, got {S}")
    ids = draw_ids(problem, rng, int(S), replace=replace)
    return batch_gradient(problem, x, ids, retain=retain, workers=workers)


def full_estimate(problem, x, retain: bool = False, workers: int = 1) -> GradientEstimate:
    """Estimate over every sample exactly once (the exact gradient of a finite sum)."""
    return batch_gradient(problem, x, np.arange(problem.n_samples), retain=retain, workers=workers)


def augment(
    e: GradientEstimate,
    problem,
    x,
    S_k: int,
    rng: np.random.Generator,
    replace: bool = True,
    workers: int = 1,
) -> GradientEstimate:
    """Grow ``e`` to ``S_k`` samples by drawing ``S_k - S`` more at the same ``x``."""
    if S_k <= e.batch_size:
        raise ValueError(f"augmented size {S_k} must exceed current size {e.batch_size}")
    x = np.asarray(x, dtype=float)
    new_ids = draw_ids(problem, rng, int(S_k - e.batch_size), replace=replace, exclude=e.sample_ids)
    retain = e.gradients is not None
    moments, grads = _reduce(problem, x, new_ids, retain, workers)
    n, mean, m2 = _merge((e.batch_size, e.mean, e.sum_sq_dev), moments)
    ids = np.concatenate([e.sample_ids, new_ids])
    if retain:
        grads = np.concatenate([e.gradients, grads])
    return GradientEstimate(mean, int(n), max(m2, 0.0), ids, grads, False)


def sample_variance_total(e: GradientEstimate) -> float:
    """Unbiased estimate of ``E||grad F(x, theta) - grad f(x)||^2`` from the batch."""
    if e.batch_size < 2:
        raise EstimateStateError("sample variance needs at least two samples")
    return e.sum_sq_dev / (e.batch_size - 1)


def sample_variance_directional(e: GradientEstimate, d) -> float:
    """Sample variance of the per-sample gradients projected on ``d``."""
    if e.gradients is None:
        raise EstimateStateError("directional variance needs retained per-sample gradients")
    if e.batch_size < 2:
        raise EstimateStateError("sample variance needs at least two samples")
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("direction must be finite")
    proj = e.deviations @ d
    return float(proj @ proj) / (e.batch_size - 1)
