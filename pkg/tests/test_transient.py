import numpy as np
import pytest
import scipy.integrate

from ldqbd import (
    InversionConfig,
    QbdModel,
    TransientQuery,
    assemble_full_generator,
    build_two_class,
    invert_transform,
    rtilde_family,
    stationary_distribution,
    stationary_sensitivity,
    transient_distribution,
    transient_sensitivity,
    transient_transform,
)
from ldqbd.oracle import uniformization

from conftest import random_model, rel_err


class TestRtildeFamily:
    def test_top_member(self, mm12):
        fam = rtilde_family(mm12, 1.0)
        assert np.allclose(fam[0], [[1 / 3]], atol=1e-14)

    def test_recursive_member(self, mm12):
        fam = rtilde_family(mm12, 1.0)
        assert np.allclose(fam[1], [[0.3]], atol=1e-14)

    def test_shapes(self):
        base = build_two_class(1.0, 0.8, 1.2, 0.9, 3).base
        fam = rtilde_family(base, 0.5)
        # ordered from the top: member i couples levels N-i-1 and N-i
        top = base.top_level
        for i, m in enumerate(fam):
            n = top - i
            assert m.shape == (base.phase_counts[n - 1], base.phase_counts[n])


class TestTransientTransform:
    def test_mass_identity(self, mm12):
        query = TransientQuery(0, [1.0], (1.0,))
        for s in (0.3, 1.0, 5.0):
            ft = transient_transform(mm12, query, s)
            assert abs(s * ft.total() - 1.0) < 1e-10

    def test_two_state_closed_form(self):
        model = QbdModel((1, 1), ([[-1.0]], [[-1.0]]), ([[1.0]],), ([[1.0]],))
        query = TransientQuery(0, [1.0], (1.0,))
        for s in (0.5, 1.0, 2.0):
            ft = transient_transform(model, query, s)
            assert ft.segment(0)[0] == pytest.approx(
                (s + 1) / (s * (s + 2)), abs=1e-12
            )

    def test_matches_quadrature(self, mm12):
        # transform values against direct numerical integration of the
        # damped time-domain path probabilities
        q = assemble_full_generator(mm12)
        p0 = np.array([1.0, 0.0, 0.0])
        s = 1.0
        ft = transient_transform(mm12, TransientQuery(0, [1.0], (1.0,)), s).flatten()
        for j in range(3):
            val, _ = scipy.integrate.quad(
                lambda t: np.exp(-s * t) * uniformization(q, p0, t)[j], 0.0, 60.0,
                limit=200,
            )
            assert abs(ft[j] - val) < 1e-6

    def test_interior_start_level(self, mm12):
        query = TransientQuery(1, [1.0], (1.0,))
        for s in (0.4, 2.0):
            ft = transient_transform(mm12, query, s)
            assert abs(s * ft.total() - 1.0) < 1e-10

    def test_rejects_nonpositive_real_part(self, mm12):
        with pytest.raises(ValueError):
            transient_transform(mm12, TransientQuery(0, [1.0], (1.0,)), 0.0)


class TestInvertTransform:
    def test_constant_function(self):
        # aliasing floor of the default settings sits just above 1e-8
        out = invert_transform(lambda s: 1.0 / s, 3.0)
        assert abs(out[0] - 1.0) < 1.1e-8

    def test_exponential_decay(self):
        out = invert_transform(lambda s: 1.0 / (s + 1.0), 1.0)
        assert abs(out[0] - np.exp(-1.0)) < 1e-7

    def test_linear_growth(self):
        out = invert_transform(lambda s: 1.0 / s**2, 2.0)
        assert abs(out[0] - 2.0) < 1e-7

    def test_cosine(self):
        out = invert_transform(lambda s: s / (s * s + 1.0), 2.0)
        assert abs(out[0] - np.cos(2.0)) < 1e-7

    def test_vector_valued(self):
        out = invert_transform(lambda s: np.array([1.0 / s, 1.0 / (s + 2.0)]), 1.5)
        assert abs(out[0] - 1.0) < 1e-7
        assert abs(out[1] - np.exp(-3.0)) < 1e-7

    def test_deterministic(self):
        f = lambda s: 1.0 / (s + 0.5)
        a = invert_transform(f, 0.8)
        b = invert_transform(f, 0.8)
        assert np.array_equal(a, b)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            InversionConfig(discount=-1.0)
        with pytest.raises(ValueError):
            invert_transform(lambda s: 1.0 / s, 0.0)


class TestTransientDistribution:
    def test_initial_condition(self, mm12):
        dist = transient_distribution(mm12, TransientQuery(0, [1.0], (1e-6,)))[0]
        assert dist.segment(0)[0] == pytest.approx(1.0, abs=1e-5)
        assert dist.segment(1)[0] + dist.segment(2)[0] < 1e-5

    def test_long_run_limit(self, mm12):
        dist = transient_distribution(mm12, TransientQuery(0, [1.0], (50.0,)))[0]
        pi = stationary_distribution(mm12)
        assert np.max(np.abs(dist.flatten() - pi.flatten())) < 1e-6

    def test_matches_uniformization(self, mm12):
        q = assemble_full_generator(mm12)
        dist = transient_distribution(mm12, TransientQuery(0, [1.0], (0.7,)))[0]
        ref = uniformization(q, np.array([1.0, 0.0, 0.0]), 0.7)
        assert np.max(np.abs(dist.flatten() - ref)) < 1e-6

    def test_matches_uniformization_on_random_models(self):
        rng = np.random.default_rng(200)
        for _ in range(15):
            model = random_model(rng, max_levels=4, max_phases=3)
            n0 = int(rng.integers(0, model.top_level + 1))
            alpha = rng.uniform(0.2, 1.0, model.phase_counts[n0])
            alpha /= alpha.sum()
            times = (0.1, 1.0, 5.0)
            dists = transient_distribution(model, TransientQuery(n0, alpha, times))
            q = assemble_full_generator(model)
            p0 = np.zeros(model.num_states)
            off = model.offsets()[n0]
            p0[off : off + alpha.size] = alpha
            for t, dist in zip(times, dists):
                ref = uniformization(q, p0, t)
                assert np.max(np.abs(dist.flatten() - ref)) < 1e-6

    def test_kolmogorov_residual(self, mm12):
        # centered difference of the solved path against its balance law
        q = assemble_full_generator(mm12)
        dt = 1e-3
        times = (1.0 - dt, 1.0, 1.0 + dt)
        dists = transient_distribution(mm12, TransientQuery(0, [1.0], times))
        deriv = (dists[2].flatten() - dists[0].flatten()) / (2 * dt)
        assert np.max(np.abs(deriv - dists[1].flatten() @ q)) < 1e-4


class TestTransientSensitivity:
    def test_gradient_mass_zero(self, mm12_param):
        query = TransientQuery(0, [1.0], (0.5, 2.0))
        for bundle in transient_sensitivity(mm12_param, query):
            for grad in bundle.partials:
                assert abs(grad.flatten().sum()) < 1e-6

    def test_matches_finite_difference(self, mm12_param):
        query = TransientQuery(0, [1.0], (1.0,))
        bundle = transient_sensitivity(mm12_param, query)[0]
        h = 1e-5
        for name in mm12_param.params:
            hi = transient_distribution(mm12_param.shifted(name, h), query)[0]
            lo = transient_distribution(mm12_param.shifted(name, -h), query)[0]
            fd = (hi.flatten() - lo.flatten()) / (2 * h)
            assert rel_err(bundle.partial(name).flatten(), fd) < 1e-4

    def test_long_run_limit_matches_stationary_gradient(self, mm12_param):
        query = TransientQuery(0, [1.0], (50.0,))
        bundle = transient_sensitivity(mm12_param, query)[0]
        stat = stationary_sensitivity(mm12_param)
        for name in mm12_param.params:
            got = bundle.partial(name).flatten()
            want = stat.partial(name).flatten()
            assert np.max(np.abs(got - want)) < 1e-5

    def test_value_matches_distribution(self, mm12_param):
        query = TransientQuery(0, [1.0], (0.9,))
        bundle = transient_sensitivity(mm12_param, query)[0]
        dist = transient_distribution(mm12_param.base, query)[0]
        assert np.max(np.abs(bundle.value.flatten() - dist.flatten())) < 1e-14


class TestQueryValidation:
    def test_alpha_must_be_distribution(self):
        with pytest.raises(ValueError):
            TransientQuery(0, [0.5, 0.4], (1.0,))
        with pytest.raises(ValueError):
            TransientQuery(0, [-0.2, 1.2], (1.0,))

    def test_times_positive(self):
        with pytest.raises(ValueError):
            TransientQuery(0, [1.0], (0.0,))

    def test_alpha_length_checked_at_solve(self, mm12):
        query = TransientQuery(1, [0.5, 0.5], (1.0,))
        with pytest.raises(ValueError):
            transient_transform(mm12, query, 1.0)
