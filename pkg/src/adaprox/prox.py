"""Convex terms ``h`` of a composite objective and their proximal maps.

Every term exposes ``evaluate(x)`` (possibly ``+inf``) and
``prox(alpha, z) = argmin_x h(x) + ||x - z||^2 / (2 alpha)`` in closed form:

* ``L1``           soft-thresholding,
* ``halfspace``    projection onto ``{x : a^T x <= b}``,
* ``box``          componentwise clipping,
* ``nonneg``       projection onto the nonnegative orthant,
* ``zero``         identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("zero", "l1", "halfspace", "box", "nonneg")


@dataclass(frozen=True, eq=False)
class ProxFunction:
    """An immutable convex term ``h``.

    Use the module-level constructors (:func:`zero`, :func:`l1`,
    :func:`halfspace`, :func:`box`, :func:`nonneg`) rather than building
    this directly; they validate the parameters.
    """

    kind: str
    dimension: int
    weight: float = 0.0
    a: np.ndarray | None = field(default=None, repr=False)
    b: float = 0.0
    lo: np.ndarray | None = field(default=None, repr=False)
    hi: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prox kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        for name in ("a", "lo", "hi"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def is_indicator(self) -> bool:
        return self.kind in ("halfspace", "box", "nonneg")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "l1" and self.weight == 0.0)

    def describe(self) -> dict:
        """JSON-friendly description, used in run metadata."""
        out: dict = {"kind": self.kind, "dimension": self.dimension}
        if self.kind == "l1":
            out["weight"] = self.weight
        elif self.kind == "halfspace":
            out["a"] = self.a.tolist()
            out["b"] = self.b
        elif self.kind == "box":
            out["lo"] = self.lo.tolist()
            out["hi"] = self.hi.tolist()
        return out

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(
                f"expected a vector of length {self.dimension}, got shape {x.shape}"
            )
        return x

    def evaluate(self, x) -> float:
        """Value of ``h`` at ``x``; ``inf`` outside an indicator's set."""
        x = self._check(x)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return float(self.weight * np.abs(x).sum())
        if self.kind == "halfspace":
            return 0.0 if float(self.a @ x) <= self.b else np.inf
        if self.kind == "box":
            return 0.0 if np.all(x >= self.lo) and np.all(x <= self.hi) else np.inf
        return 0.0 if np.all(x >= 0.0) else np.inf

    def evaluate_prox_output(self, x) -> float:
        """``h`` at a point returned by :meth:`prox`.

        Projections are feasible by construction, so indicators give 0 here
        even when rounding leaves the point a few ulps outside the set.
        """
        x = self._check(x)
        if self.kind == "l1":
            return float(self.weight * np.abs(x).sum())
        return 0.0

    def prox(self, alpha: float, z) -> np.ndarray:
        """Closed-form ``prox_{alpha h}(z)``."""
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        z = self._check(z)
        if self.kind == "zero":
            return z.copy()
        if self.kind == "l1":
            t = alpha * self.weight
            return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
        if self.kind == "halfspace":
            viol = float(self.a @ z) - self.b
            if viol <= 0.0:
                return z.copy()
            return z - viol * self.a / float(self.a @ self.a)
        if self.kind == "box":
            return np.clip(z, self.lo, self.hi)
        return np.maximum(z, 0.0)


def zero(dimension: int) -> ProxFunction:
    return ProxFunction("zero", int(dimension))


def l1(weight: float, dimension: int) -> ProxFunction:
    """``h(x) = weight * ||x||_1``; a zero weight behaves exactly like :func:`zero`."""
    weight = float(weight)
    if not weight >= 0.0:
        raise ValueError(f"L1 weight must be nonnegative, got {weight}")
    return ProxFunction("l1", int(dimension), weight=weight)


def halfspace(a, b: float = 0.0) -> ProxFunction:
    """Indicator of ``{x : a^T x <= b}``."""
    a = np.asarray(a, dtype=float).ravel()
    if not np.linalg.norm(a) > 0.0:
        raise ValueError("halfspace normal must be nonzero")
    return ProxFunction("halfspace", a.size, a=a, b=float(b))


def box(lo, hi) -> ProxFunction:
    """Indicator of ``{x : lo <= x <= hi}``."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.shape != hi.shape:
        raise ValueError("lo and hi must have the same length")
    if np.any(lo > hi):
        raise ValueError("box requires lo <= hi componentwise")
    return ProxFunction("box", lo.size, lo=lo, hi=hi)


def nonneg(dimension: int) -> ProxFunction:
    return ProxFunction("nonneg", int(dimension))


def from_spec(spec: dict, dimension: int) -> ProxFunction:
    """Build a term from a config mapping such as ``{"kind": "l1", "weight": 0.01}``."""
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return zero(dimension)
    if kind == "l1":
        return l1(spec.get("weight", 0.0), dimension)
    if kind == "halfspace":
        return halfspace(spec["a"], spec.get("b", 0.0))
    if kind == "box":
        return box(spec["lo"], spec["hi"])
    if kind == "nonneg":
        return nonneg(dimension)
    raise ValueError(f"unknown prox kind {kind!r}")


def prox_oracle(
    h: ProxFunction, alpha: float, z, grid_radius: float, grid_step: float
) -> np.ndarray:
    """Brute-force ``prox_{alpha h}(z)`` by search over a lattice centred at ``z``.

    The lattice has spacing ``grid_step`` and half-width ``grid_radius``.
    Searching every point is too expensive in 3-d, so the search runs
    coarse-to-fine: each level scans a window of lattice points at a
    multiple of ``grid_step`` around the previous winner. The prox objective
    is strongly convex, so the refinement cannot get trapped.
    """
    if h.dimension > 3:
        raise NotImplementedError("grid oracle supports dimension <= 3 only")
    if not 0 < grid_step < grid_radius:
        raise ValueError("need 0 < grid_step < grid_radius")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    z = h._check(z)

    n = int(np.floor(grid_radius / grid_step + 1e-9))
    stride = 1
    while n // stride > 16:
        stride *= 2
    # top level covers the whole lattice with stride-spaced points
    centre = np.zeros(h.dimension, dtype=np.int64)
    half = n // stride
    while True:
        best = _lattice_argmin(h, alpha, z, grid_step, n, centre, stride, half)
        if stride == 1:
            return z + best * grid_step
        centre = best
        stride //= 2
        half = 12


def _lattice_argmin(h, alpha, z, step, n, centre, stride, half):
    offs = np.arange(-half, half + 1) * stride
    axes = [np.clip(centre[j] + offs, -n, n) for j in range(h.dimension)]
    grids = np.meshgrid(*[np.unique(ax) for ax in axes], indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)
    pts = z + idx * step
    # coarse levels may straddle a thin feasible set, so they use an exact
    # penalty on the constraint violation instead of +inf
    penalty = None if stride == 1 else 1e8
    obj = _evaluate_rows(h, pts, penalty) + ((pts - z) ** 2).sum(axis=1) / (2 * alpha)
    if not np.isfinite(obj).any():
        raise ValueError("no feasible grid point; enlarge grid_radius")
    return idx[int(np.argmin(obj))]


def _evaluate_rows(h: ProxFunction, pts: np.ndarray, penalty=None) -> np.ndarray:
    if h.kind == "zero":
        return np.zeros(len(pts))
    if h.kind == "l1":
        return h.weight * np.abs(pts).sum(axis=1)
    if h.kind == "halfspace":
        viol = np.maximum(pts @ h.a - h.b, 0.0)
    elif h.kind == "box":
        viol = (np.maximum(h.lo - pts, 0.0) + np.maximum(pts - h.hi, 0.0)).sum(axis=1)
    else:
        viol = np.maximum(-pts, 0.0).sum(axis=1)
    if penalty is None:
        return np.where(viol > 0.0, np.inf, 0.0)
    return penalty * viol
