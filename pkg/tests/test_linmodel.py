import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditlab.linmodel import (ConstraintSpec, DataBatch, DualNonConvergenceError,
                                InfeasibleConstraintError, InvalidArmError,
                                LinearModel, constrained_fit, featurize, fit_ols,
                                fit_weighted, normalized_sse, sse)

from oracles import grid_search_constrained

# the worked instance: passive ERM is the line y=x with zero error, while the
# active ERM is the line 1-x, which misses the passive budget by a mile
ACTIVE = [(0.0, 1, 1.0), (1.0, 1, 0.0)]
PASSIVE = [(0.0, 1, 0.0), (1.0, 1, 1.0)]


def batch(rows, num_arms=1, dim=1):
    return DataBatch.from_rows(rows, num_arms, dim)


def random_instance(rng, n_active=8, n_passive=8):
    xs_a = rng.random(n_active)
    xs_p = rng.random(n_passive)
    wa = rng.uniform(-1, 1, 2)
    wp = rng.uniform(-1, 1, 2)
    noise = 0.05
    act = [(float(x), 1, float(wa[0] + wa[1] * x + noise * rng.standard_normal()))
           for x in xs_a]
    pas = [(float(x), 1, float(wp[0] + wp[1] * x + noise * rng.standard_normal()))
           for x in xs_p]
    slack = float(rng.uniform(0.01, 0.3))
    return batch(act), batch(pas), slack


class TestPredict:
    def test_zero_model(self):
        model = LinearModel.zeros(3)
        assert model.predict(0.7, 1) == 0.0
        assert model.predict(0.2, 3) == 0.0

    def test_step_fit_at_half(self):
        model = LinearModel(np.array([[-0.25, 1.5], [0.5, 0.0]]))
        assert model.predict(0.5, 1) == pytest.approx(0.5)

    def test_intercept_only(self):
        model = LinearModel(np.array([[0.37, 0.0]]))
        for x in (0.0, 0.25, 0.99):
            assert model.predict(x, 1) == pytest.approx(0.37)

    def test_invalid_arm(self):
        model = LinearModel.zeros(2)
        with pytest.raises(InvalidArmError):
            model.predict(0.5, 3)

    def test_predict_matrix_agrees(self):
        rng = np.random.default_rng(0)
        model = LinearModel(rng.uniform(-1, 1, (3, 2)))
        xs = rng.random(17)
        mat = model.predict_matrix(xs)
        for i, x in enumerate(xs):
            np.testing.assert_allclose(mat[i], model.predict_all(x), atol=1e-14)

    def test_param_count(self):
        assert LinearModel.zeros(2, 1).param_count == 4
        assert LinearModel.zeros(3, 2).param_count == 9


class TestFitOls:
    def test_single_row_pins_intercept_with_ridge(self):
        model = fit_ols(batch([(0.0, 1, 0.3)]))
        assert model.ridge_fallback
        assert model.weights[0, 0] == pytest.approx(0.3, abs=1e-6)

    def test_two_point_interpolation(self):
        model = fit_ols(batch([(0.0, 1, 0.0), (1.0, 1, 1.0)]))
        assert not model.ridge_fallback
        np.testing.assert_allclose(model.weights[0], [0.0, 1.0], atol=1e-12)

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(3)
        true = LinearModel(rng.uniform(-1, 1, (2, 2)))
        rows = []
        for _ in range(100):
            x = float(rng.random())
            a = int(rng.integers(2)) + 1
            rows.append((x, a, true.predict(x, a)))
        fitted = fit_ols(batch(rows, num_arms=2))
        np.testing.assert_allclose(fitted.weights, true.weights, atol=1e-8)

    def test_step_labels_match_population_fit(self):
        rng = np.random.default_rng(11)
        xs = rng.random(1_000_000)
        rows_batch = DataBatch(1, 1)
        rows_batch.xs = list(xs)
        rows_batch.arms = [1] * len(xs)
        rows_batch.rewards = list((xs > 0.5).astype(float))
        fitted = fit_ols(rows_batch)
        np.testing.assert_allclose(fitted.weights[0], [-0.25, 1.5], atol=0.01)

    def test_zero_row_arm_gets_zero_weights(self):
        model = fit_ols(batch([(0.2, 1, 0.5), (0.8, 1, 0.7)], num_arms=2))
        np.testing.assert_array_equal(model.weights[1], [0.0, 0.0])
        assert model.ridge_fallback

    @given(st.randoms(use_true_random=False))
    @settings(max_examples=25, deadline=None)
    def test_row_permutation_invariance(self, pyrng):
        rng = np.random.default_rng(pyrng.randrange(2**32))
        rows = [(float(rng.random()), int(rng.integers(2)) + 1,
                 float(rng.standard_normal())) for _ in range(12)]
        shuffled = rows[:]
        pyrng.shuffle(shuffled)
        w1 = fit_ols(batch(rows, num_arms=2)).weights
        w2 = fit_ols(batch(shuffled, num_arms=2)).weights
        np.testing.assert_allclose(w1, w2, atol=1e-9)

    def test_invalid_arm_on_append(self):
        with pytest.raises(InvalidArmError):
            batch([(0.5, 3, 1.0)], num_arms=2)


class TestSse:
    def test_interpolating_model_zero(self):
        model = fit_ols(batch([(0.0, 1, 0.0), (1.0, 1, 1.0)]))
        assert sse(model, batch([(0.0, 1, 0.0), (1.0, 1, 1.0)])) == pytest.approx(0.0, abs=1e-20)

    def test_zero_model_unit_residual(self):
        assert sse(LinearModel.zeros(1), batch([(0.3, 1, 1.0)])) == pytest.approx(1.0)

    def test_normalization(self):
        b = batch([(0.1, 1, 1.0), (0.9, 1, 1.0), (0.4, 1, 1.0)])
        model = LinearModel.zeros(1)
        assert normalized_sse(model, b) == pytest.approx(sse(model, b) / 3)

    def test_empty_batch(self):
        assert sse(LinearModel.zeros(1), batch([])) == 0.0
        assert normalized_sse(LinearModel.zeros(1), batch([])) == 0.0


class TestFitWeighted:
    def test_lambda_zero_equals_active_ols(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        np.testing.assert_allclose(fit_weighted(act, pas, 0.0).weights,
                                   fit_ols(act).weights, atol=1e-10)

    def test_lambda_huge_equals_passive_ols(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        np.testing.assert_allclose(fit_weighted(act, pas, 1e12).weights,
                                   fit_ols(pas).weights, atol=1e-4)

    @given(lam=st.floats(min_value=0.0, max_value=100.0, allow_nan=False))
    @settings(max_examples=30, deadline=None)
    def test_active_equals_passive_reduces_to_ols(self, lam):
        act = batch([(0.1, 1, 0.2), (0.6, 1, 0.9), (0.9, 1, 0.1)])
        pas = batch([(0.1, 1, 0.2), (0.6, 1, 0.9), (0.9, 1, 0.1)])
        np.testing.assert_allclose(fit_weighted(act, pas, lam).weights,
                                   fit_ols(act).weights, atol=1e-8)

    def test_empty_active_rejected(self):
        with pytest.raises(ValueError):
            fit_weighted(batch([]), batch(PASSIVE), 1.0)


class TestConstrainedFit:
    def test_worked_example_against_grid_oracle(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        model, report = constrained_fit(act, ConstraintSpec(pas, 0.25), tol=1e-6)
        # grid oracle: exhaustive search over (intercept, slope) in [-2,2]^2
        w0, w1, obj = grid_search_constrained(
            [(x, r) for x, _, r in ACTIVE], [(x, r) for x, _, r in PASSIVE], 0.25)
        assert abs(model.weights[0, 0] - w0) < 1e-3
        assert abs(model.weights[0, 1] - w1) < 1e-3
        assert normalized_sse(model, act) == pytest.approx(obj, abs=1e-2)
        # the constraint is active: passive error sits at alpha + slack
        assert normalized_sse(model, pas) == pytest.approx(0.25, abs=1e-6)
        assert report.lam > 0

    def test_huge_slack_returns_unconstrained(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        model, report = constrained_fit(act, ConstraintSpec(pas, 1e6))
        assert report.lam == 0.0
        np.testing.assert_allclose(model.weights, fit_ols(act).weights, atol=1e-10)

    def test_active_equals_passive_is_feasible(self):
        act = batch(ACTIVE)
        model, report = constrained_fit(act, ConstraintSpec(batch(ACTIVE), 0.05))
        assert report.lam == 0.0
        np.testing.assert_allclose(model.weights, fit_ols(act).weights, atol=1e-10)

    def test_nonpositive_slack_rejected(self):
        with pytest.raises(InfeasibleConstraintError):
            constrained_fit(batch(ACTIVE), ConstraintSpec(batch(PASSIVE), 0.0))

    def test_lambda_cap_raises_nonconvergence(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        with pytest.raises(DualNonConvergenceError):
            constrained_fit(act, ConstraintSpec(pas, 1e-9), lambda_max=4.0)

    def test_random_instances_feasible_and_optimal(self):
        rng = np.random.default_rng(21)
        tol = 1e-6
        for _ in range(10):
            act, pas, slack = random_instance(rng)
            model, report = constrained_fit(act, ConstraintSpec(pas, slack), tol=tol)
            alpha = report.alpha
            # feasibility
            assert normalized_sse(model, pas) <= alpha + slack + tol
            # complementary slackness
            assert report.lam <= tol or abs(report.constraint_residual) <= tol
            # exact primal recovery from the reported multiplier
            again = fit_weighted(act, pas, report.lam)
            assert np.array_equal(again.weights, model.weights)

    def test_dual_is_concave_along_lambda(self):
        act, pas = batch(ACTIVE), batch(PASSIVE)
        alpha = ConstraintSpec(pas, 0.25).alpha()
        lams = np.linspace(0.0, 6.0, 61)
        g = []
        for lam in lams:
            m = fit_weighted(act, pas, lam)
            g.append(normalized_sse(m, act) + lam * (normalized_sse(m, pas) - alpha - 0.25))
        second = np.diff(g, 2)
        assert second.max() <= 1e-9

    def test_matches_grid_oracle_on_random_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(5):
            act, pas, slack = random_instance(rng, n_active=6, n_passive=6)
            model, report = constrained_fit(act, ConstraintSpec(pas, slack), tol=1e-6)
            w0, w1, obj = grid_search_constrained(
                list(zip([x for x in act.xs], act.rewards)),
                list(zip([x for x in pas.xs], pas.rewards)), slack)
            assert normalized_sse(model, act) <= obj + 1e-2

    def test_alpha_recomputed_not_stale(self):
        pas = batch(PASSIVE)
        cons = ConstraintSpec(pas, 0.25)
        first = cons.alpha()
        pas.append(0.5, 1, 3.0)  # distort the batch after building the spec
        assert cons.alpha() != pytest.approx(first)


class TestFeaturize:
    def test_scalar_contexts(self):
        Phi = featurize([0.2, 0.7], 1)
        np.testing.assert_allclose(Phi, [[1.0, 0.2], [1.0, 0.7]])

    def test_vector_contexts(self):
        Phi = featurize(np.array([[0.2, 0.3]]), 2)
        np.testing.assert_allclose(Phi, [[1.0, 0.2, 0.3]])
