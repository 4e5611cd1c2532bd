import numpy as np
import pytest

from ldqbd import (
    NoConvergenceError,
    QbdModel,
    assemble_full_generator,
    build_mmpp_queue,
    build_perturbed,
    build_two_class,
    find_truncation_level,
    rhat_family,
    stationary_distribution,
    stationary_sensitivity,
)
from ldqbd.model import BlockSet
from ldqbd.oracle import direct_stationary, finite_difference

from conftest import mm12_model, random_model, rel_err


class TestRhatFamily:
    def test_canonical_values(self, mm12):
        fam = rhat_family(mm12, 0.0)
        assert np.allclose(fam.matrices[0], [[2.0]], atol=1e-14)
        assert np.allclose(fam.matrices[1], [[2.0]], atol=1e-14)

    def test_nonnegative_at_zero(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            fam = rhat_family(random_model(rng), 0.0)
            for m in fam.matrices:
                assert np.min(m) >= 0.0

    def test_scalar_resolvent(self):
        model = QbdModel((1, 1), ([[-1.0]], [[-2.0]]), ([[1.0]],), ([[2.0]],))
        fam = rhat_family(model, 1.0)
        assert np.allclose(fam.matrices[0], [[1.0]], atol=1e-14)

    def test_shapes(self):
        pm = build_two_class(1.0, 0.8, 1.2, 0.9, 3)
        fam = rhat_family(pm.base, 0.0)
        for n, m in enumerate(fam.matrices):
            assert m.shape == (n + 2, n + 1)


class TestStationaryDistribution:
    def test_canonical_queue(self, mm12):
        pi = stationary_distribution(mm12).flatten()
        assert np.allclose(pi, [4 / 7, 2 / 7, 1 / 7], atol=1e-12)

    def test_balanced_rates_uniform(self):
        model = QbdModel(
            (1, 1, 1),
            ([[-1.0]], [[-2.0]], [[-1.0]]),
            ([[1.0]], [[1.0]]),
            ([[1.0]], [[1.0]]),
        )
        assert np.allclose(stationary_distribution(model).flatten(), 1 / 3, atol=1e-13)

    def test_two_class_matches_dense(self):
        base = build_two_class(1, 1, 1, 1, 2).base
        pi = stationary_distribution(base).flatten()
        ref = direct_stationary(assemble_full_generator(base))
        assert np.max(np.abs(pi - ref)) < 1e-10

    def test_matches_dense_on_random_models(self):
        rng = np.random.default_rng(100)
        for _ in range(200):
            model = random_model(rng)
            pi = stationary_distribution(model).flatten()
            ref = direct_stationary(assemble_full_generator(model))
            assert np.max(np.abs(pi - ref)) < 1e-9
            assert np.min(pi) > 0.0

    def test_balance_residual(self):
        rng = np.random.default_rng(101)
        for _ in range(25):
            model = random_model(rng)
            pi = stationary_distribution(model).flatten()
            residual = np.max(np.abs(pi @ assemble_full_generator(model)))
            assert residual < 1e-10
            assert abs(pi.sum() - 1.0) < 1e-12

    def test_scale_covariance(self):
        rng = np.random.default_rng(102)
        model = random_model(rng)
        scaled = QbdModel(
            model.phase_counts,
            tuple(3.7 * d for d in model.diag),
            tuple(3.7 * u for u in model.up),
            tuple(3.7 * d for d in model.down),
        )
        a = stationary_distribution(model).flatten()
        b = stationary_distribution(scaled).flatten()
        assert np.max(np.abs(a - b)) < 1e-12


class TestStationarySensitivity:
    def test_closed_form_arrival(self, mm12_param):
        sens = stationary_sensitivity(mm12_param)
        assert sens.partial("lambda").segment(0)[0] == pytest.approx(-16 / 49, abs=1e-12)

    def test_closed_form_service(self, mm12_param):
        sens = stationary_sensitivity(mm12_param)
        assert sens.partial("mu").segment(0)[0] == pytest.approx(8 / 49, abs=1e-12)

    def test_value_matches_distribution(self, mm12_param):
        sens = stationary_sensitivity(mm12_param)
        pi = stationary_distribution(mm12_param.base)
        assert np.allclose(sens.value.flatten(), pi.flatten(), atol=1e-14)

    def test_gradient_mass_zero(self):
        pm = build_two_class(1.3, 0.7, 2.1, 0.4, 3)
        sens = stationary_sensitivity(pm)
        for grad in sens.partials:
            assert abs(grad.flatten().sum()) < 1e-10

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_matches_finite_difference_mmpp(self, seed):
        rng = np.random.default_rng(seed)
        t_env = [[-0.6, 0.6], [0.9, -0.9]]
        theta = rng.uniform(0.1, 5.0, 4)
        pm = build_mmpp_queue(t_env, theta[:2], theta[2:], 3)
        sens = stationary_sensitivity(pm)

        def solve(th):
            m = build_mmpp_queue(t_env, th[:2], th[2:], 3)
            return stationary_distribution(m.base).flatten()

        fd = finite_difference(solve, theta, 1e-5)
        for i in range(4):
            assert rel_err(sens.partials[i].flatten(), fd[i]) < 1e-4

    @pytest.mark.parametrize("seed", [4, 5])
    def test_matches_finite_difference_two_class(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0.1, 5.0, 4)
        pm = build_two_class(*theta, 3)
        sens = stationary_sensitivity(pm)

        def solve(th):
            return stationary_distribution(build_two_class(*th, 3).base).flatten()

        fd = finite_difference(solve, theta, 1e-5)
        for i in range(4):
            assert rel_err(sens.partials[i].flatten(), fd[i]) < 1e-4

    def test_matches_finite_difference_perturbed(self, mm12):
        directions = [
            BlockSet(
                ([[-1.0]], [[-1.0]], [[0.0]]),
                ([[1.0]], [[1.0]]),
                ([[0.0]], [[0.0]]),
            ),
            BlockSet(
                ([[0.0]], [[1.0]], [[1.0]]),
                ([[0.0]], [[0.0]]),
                ([[-1.0]], [[-1.0]]),
            ),
        ]
        eps = np.array([0.15, 0.1])
        pm = build_perturbed(mm12, directions, eps)
        sens = stationary_sensitivity(pm)

        def solve(th):
            return stationary_distribution(
                build_perturbed(mm12, directions, th).base
            ).flatten()

        fd = finite_difference(solve, eps, 1e-5)
        for i in range(2):
            assert rel_err(sens.partials[i].flatten(), fd[i]) < 1e-4


class TestTruncationSearch:
    @staticmethod
    def _family(level):
        return build_mmpp_queue([[0.0]], [1.0], [1.0], level).base

    def test_level_scaled_service_family(self):
        res = find_truncation_level(self._family, 1e-8, probe_levels=[0, 1, 2], l_max=50)
        assert res.level <= 50
        assert res.gap < 1e-8
        # probe segments are stable well beyond the accepted level
        lo = stationary_distribution(self._family(res.level)).flatten()
        hi = stationary_distribution(self._family(res.level + 5)).flatten()
        assert np.max(np.abs(lo[:3] - hi[:3])) < 1e-7

    def test_loose_tolerance_stops_first(self):
        res = find_truncation_level(self._family, 1e3, probe_levels=[0, 1, 2], l_max=50)
        assert res.level == 2

    def test_unreachable_tolerance(self):
        with pytest.raises(NoConvergenceError):
            find_truncation_level(self._family, 1e-300, probe_levels=[0], l_max=2)

    def test_default_probes(self):
        res = find_truncation_level(self._family, 1e-8, l_max=50)
        assert res.gap < 1e-8

    def test_invalid_eps(self):
        with pytest.raises(ValueError):
            find_truncation_level(self._family, 0.0)
