import math

import numpy as np
import pytest

from adaprox import prox as P
from adaprox.controllers import ControllerConfig
from adaprox.exceptions import ConfigError, ReferenceDivergence
from adaprox.problems import exact_phi, make_pool_quadratic
from adaprox.solver import SolverConfig, solve, solve_deterministic


def run(problem, h, kind="norm", **kw):
    ctrl = kw.pop("controller", None) or ControllerConfig(kind)
    x0, phi_star = kw.pop("x0", None), kw.pop("phi_star", None)
    kw.setdefault("timing", False)
    return solve(problem, h, SolverConfig(ctrl, **kw), x0=x0, phi_star=phi_star)


class TestConfig:
    def test_theory_alpha(self, quad):
        assert SolverConfig(ControllerConfig("norm", eta=0.5)).resolve_alpha(quad) == pytest.approx(0.5 / quad.L)
        ip = SolverConfig(ControllerConfig.ip_from_eta(0.5))
        assert ip.resolve_alpha(quad) == pytest.approx(0.5 / quad.L)
        with pytest.raises(ConfigError):
            SolverConfig(ControllerConfig("geometric")).resolve_alpha(quad)
        with pytest.raises(ConfigError):
            SolverConfig(ControllerConfig("norm"), alpha=-1.0).resolve_alpha(quad)

    def test_infeasible_start(self, quad_constrained):
        with pytest.raises(ValueError):
            run(quad_constrained, quad_constrained.default_h(), x0=[1.0, 0.0, 0.0], alpha=0.1)


class TestRecords:
    @pytest.mark.parametrize("kind", ["norm", "ip", "geometric"])
    def test_batch_sizes_monotone_and_capped(self, small_logistic, kind):
        h = small_logistic.default_h()
        _, recs = run(small_logistic, h, kind, alpha=1.0, max_epochs=30)
        S = [r.batch_size for r in recs]
        assert all(b >= a for a, b in zip(S, S[1:]))
        assert S[-1] <= small_logistic.n_samples
        assert [r.k for r in recs] == list(range(1, len(recs) + 1))
        cum = [r.cumulative_samples for r in recs]
        assert all(b > a for a, b in zip(cum, cum[1:]))
        np.testing.assert_allclose([r.effective_gradient_evaluations for r in recs],
                                   np.array(cum) / small_logistic.n_samples)

    def test_cumulative_counts_trial_and_augmentation(self, quad):
        _, recs = run(quad, P.zero(quad.dimension), "geometric", alpha=0.2, max_iter=6,
                      controller=ControllerConfig("geometric", gamma=1.0))
        # trial uses S_{k-1}, augmentation tops up to S_k = 2^(k+1)
        S = [r.batch_size for r in recs]
        assert S == [2, 4, 8, 16, 32, 64]
        assert [r.cumulative_samples for r in recs] == list(np.cumsum(S))
        assert [r.resampled for r in recs] == [False] + [True] * 5

    def test_resample_all_counts_both_batches(self, quad):
        ctrl = ControllerConfig("geometric", gamma=1.0)
        _, recs = run(quad, P.zero(quad.dimension), alpha=0.2, max_iter=3, controller=ctrl, resample_all=True)
        assert [r.cumulative_samples for r in recs] == [2, 2 + 2 + 4, 8 + 4 + 8]

    def test_phi_gap_and_timing(self, quad):
        phi_star = quad.value(quad.minimizer())
        _, recs = run(quad, P.zero(quad.dimension), alpha=0.2, max_iter=5, phi_star=None)
        assert all(math.isnan(r.phi_gap) and math.isnan(r.wall_time) for r in recs)
        _, recs = solve(quad, P.zero(quad.dimension),
                        SolverConfig(ControllerConfig("norm"), alpha=0.2, max_iter=5), phi_star=phi_star)
        assert all(r.phi_gap == pytest.approx(r.phi - phi_star) for r in recs)
        assert all(r.wall_time >= 0 for r in recs)

    def test_record_every(self, quad):
        _, recs = run(quad, P.zero(quad.dimension), alpha=0.2, max_iter=10, record_every=4)
        assert [r.k for r in recs] == [4, 8, 10]
        assert recs[-1].stop_reason == "max_iter"


class TestReplay:
    def test_same_seed_same_bits(self, small_logistic):
        h = small_logistic.default_h()
        xa, ra = run(small_logistic, h, "ip", alpha=0.5, seed=11, max_epochs=10)
        xb, rb = run(small_logistic, h, "ip", alpha=0.5, seed=11, max_epochs=10)
        np.testing.assert_array_equal(xa, xb)
        assert [r.as_dict() for r in ra] == [r.as_dict() for r in rb]
        xc, _ = run(small_logistic, h, "ip", alpha=0.5, seed=12, max_epochs=10)
        assert not np.array_equal(xa, xc)

    def test_workers_do_not_change_bits(self, small_logistic):
        h = small_logistic.default_h()
        xa, ra = run(small_logistic, h, "norm", alpha=0.5, seed=3, max_epochs=10, workers=1)
        xb, rb = run(small_logistic, h, "norm", alpha=0.5, seed=3, max_epochs=10, workers=3)
        np.testing.assert_array_equal(xa, xb)


class TestTermination:
    def test_step_tolerance(self):
        p = make_pool_quadratic(3, 0.5, 1.0, 0.0, seed=4)
        x, recs = run(p, P.zero(3), alpha=1.0 / p.L)
        assert recs[-1].stop_reason == "step_tolerance"
        np.testing.assert_allclose(x, p.minimizer(), atol=1e-7)

    def test_epoch_budget(self, small_logistic):
        _, recs = run(small_logistic, small_logistic.default_h(), alpha=0.5, max_epochs=3, step_tolerance=0.0)
        assert recs[-1].stop_reason == "max_epochs"
        assert recs[-1].effective_gradient_evaluations >= 3
        assert recs[-2].effective_gradient_evaluations < 3

    def test_constrained_iterates_stay_feasible(self, quad_constrained):
        h = quad_constrained.default_h()
        x, recs = run(quad_constrained, h, "ip", alpha=0.3, max_iter=200, seed=2)
        assert all(np.isfinite(r.phi) for r in recs)
        assert h.a @ x <= 1e-12


class TestDeterministic:
    def test_converges_on_quadratic(self, quad):
        path = solve_deterministic(quad, P.zero(quad.dimension), 1.0 / quad.L, 3000, keep_iterates=True)
        assert path.best_phi == pytest.approx(quad.value(quad.minimizer()), abs=1e-12)
        assert np.all(np.diff(path.phi) <= 1e-15)
        assert len(path.iterates) == 3001

    def test_divergence_detected(self, quad):
        with pytest.raises(ReferenceDivergence) as info:
            solve_deterministic(quad, P.zero(quad.dimension), 3.0 / quad.L, 10_000,
                                x0=np.ones(quad.dimension), divergence_window=100)
        assert "smaller steplength" in str(info.value)
        assert info.value.iteration == 100

    def test_l1_monotone(self, small_logistic):
        h = small_logistic.default_h()
        path = solve_deterministic(small_logistic, h, 1.0 / small_logistic.L, 300)
        assert np.all(np.diff(path.phi) <= 1e-14)
        assert path.phi[-1] == pytest.approx(exact_phi(small_logistic, h, path.x))
