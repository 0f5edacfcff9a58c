import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causalstabsel.core import SelectionSet
from causalstabsel.ipss import (
    cell_widths,
    efp_bound_constant,
    efp_report,
    efp_scores,
    f_transform,
    integral_scores,
    measure_weights,
    qhat_curve,
    select_at_target,
    select_fdr,
    ss_max_select,
    truncate_by_qhat,
)
from causalstabsel.stabsel import LambdaGrid, SelectionEvents, curves_from_events

probs = st.floats(0.0, 1.0, allow_nan=False)


# ---------------------------------------------------------------- f


def test_f_hand_values():
    assert f_transform(0.5) == 0
    assert f_transform(1.0) == 1
    assert f_transform(0.75) == 0.125
    assert f_transform(0.3) == 0
    with pytest.raises(ValueError):
        f_transform(1.2)


def test_f_convex_nondecreasing():
    g = np.random.default_rng(0)
    a, b = g.random(10_000), g.random(10_000)
    assert np.all(f_transform((a + b) / 2) <= (f_transform(a) + f_transform(b)) / 2 + 1e-15)
    xs = np.linspace(0, 1, 1001)
    assert np.all(np.diff(f_transform(xs)) >= 0)


# ---------------------------------------------------------------- measure


def test_measure_two_point_hand_value():
    w = measure_weights(np.array([2.0, 1.0]), 1.0).weights
    np.testing.assert_allclose(w, [1 / 3, 2 / 3], atol=1e-15)


def test_measure_uniform_spacing_delta_zero():
    w = measure_weights(np.linspace(5, 1, 9), 0.0).weights
    np.testing.assert_allclose(w, 1 / 9, atol=1e-15)


def test_cell_widths_hand_values():
    np.testing.assert_allclose(cell_widths([8.0, 4.0, 2.0, 1.0]), [4, 3, 1.5, 1])


@given(st.integers(2, 60), st.floats(0.0, 6.0), st.floats(1.5, 1e4))
def test_measure_normalized(G, delta, ratio):
    grid = LambdaGrid.geometric(1.0, G, "lasso", ratio)
    w = measure_weights(grid, delta).weights
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-12


def test_measure_larger_delta_shifts_mass_to_small_lambda():
    grid = LambdaGrid.geometric(1.0, 30, "lasso")
    w1 = measure_weights(grid, 1.0).weights
    w2 = measure_weights(grid, 2.0).weights
    assert w2[-1] > w1[-1] and w2[0] < w1[0]


# ---------------------------------------------------------------- integral scores


def test_integral_score_hand_values():
    w = np.array([0.25, 0.25, 0.5])
    pi = np.array([[1.0, 1, 1], [0.5, 0.2, 0.4], [0.75, 0.75, 0.0]])
    np.testing.assert_allclose(integral_scores(pi, w), [1.0, 0.0, 0.0625], atol=1e-15)
    with pytest.raises(ValueError):
        integral_scores(pi, w[:2])


@given(arrays(float, (4, 6), elements=probs), st.integers(0, 3), st.integers(0, 5), st.floats(0, 1))
def test_raising_a_probability_never_lowers_scores(pi, j, g, bump):
    w = measure_weights(LambdaGrid.geometric(1.0, 6, "lasso"), 1.0).weights
    before = integral_scores(pi, w)
    pi2 = pi.copy()
    pi2[j, g] = max(pi2[j, g], bump)
    after = integral_scores(pi2, w)
    assert np.all(after >= before - 1e-15)
    C = 0.3
    assert select_at_target(efp_scores(before, C, 4), 1.0) <= select_at_target(efp_scores(after, C, 4), 1.0)


# ---------------------------------------------------------------- q-hat and the bound


def test_qhat_hand_and_limits():
    ev = np.zeros((4, 1, 3), dtype=bool)
    ev[0, 0, :2] = True
    ev[1, 0, 0] = True
    ev[3, 0, 2] = True
    assert qhat_curve(ev)[0] == 1.0
    assert np.all(qhat_curve(np.zeros((4, 2, 3), dtype=bool)) == 0)
    assert np.all(qhat_curve(np.ones((4, 2, 3), dtype=bool)) == 3)


def test_bound_constant_hand_value():
    assert efp_bound_constant(np.array([1.0]), np.array([1.0]), 2, 10) == pytest.approx(0.02575, abs=1e-15)
    assert efp_bound_constant(np.zeros(3), np.full(3, 1 / 3), 5, 10) == 0
    with pytest.raises(ValueError):
        efp_bound_constant(np.array([1.0]), np.array([1.0]), 1, 10)


def test_bound_constant_independent_oracle():
    # exact rational arithmetic route
    from fractions import Fraction as F
    q, B, p = F(3, 2), 7, 12
    integrand = q**2 / (B**2 * p) + 3 * (B - 1) * q**4 / (B**2 * p**3) + (B - 1) * (B - 2) * q**6 / (B**2 * p**5)
    ours = efp_bound_constant(np.array([1.5, 1.5]), np.array([0.4, 0.6]), B, p)
    assert ours == pytest.approx(float(integrand), rel=1e-14)


@given(arrays(float, 5, elements=st.floats(0, 10)), arrays(float, 5, elements=st.floats(0, 1)))
def test_bound_constant_monotone_in_qhat(q, extra):
    w = np.full(5, 0.2)
    q2 = np.minimum(q + extra, 10)
    assert efp_bound_constant(q2, w, 10, 10) >= efp_bound_constant(q, w, 10, 10)


def test_bound_constant_grid_refinement():
    # piecewise-constant q-hat on [0, 1] under the uniform measure: exact value is the average integrand
    def integrand(q):
        return efp_bound_constant(np.array([q]), np.array([1.0]), 10, 20)

    exact = 0.5 * integrand(2.0) + 0.5 * integrand(6.0)
    errs = []
    for G in (11, 101, 1001):
        lam = np.linspace(1, 1e-9, G)
        q = np.where(lam > 0.5, 2.0, 6.0)
        w = measure_weights(lam, 0.0).weights
        errs.append(abs(efp_bound_constant(q, w, 10, 20) - exact))
    assert errs[1] < errs[0] and errs[2] < errs[1]
    assert errs[2] < 5 * exact / 1000


# ---------------------------------------------------------------- efp and selection


def test_efp_hand_values():
    np.testing.assert_allclose(efp_scores(np.array([0.5, 0.0, 1.0]), 0.05, 10), [0.1, 10, 0.05])
    assert efp_scores(np.array([1.0]), 50.0, 10)[0] == 10


def test_select_at_target_examples():
    efp = np.array([0.1, 0.4, 5])
    assert select_at_target(efp, 0.4) == SelectionSet((0, 1))
    assert len(select_at_target(efp, 0.0)) == 0
    assert len(select_at_target(efp, 5)) == 3


def test_select_fdr_examples():
    assert select_fdr(np.array([0.05, 0.2, 3]), 0.1) == SelectionSet((0, 1))
    assert len(select_fdr(np.array([0.05, 0.2, 3]), 0.0)) == 0
    assert len(select_fdr(np.full(5, 5.0), 0.1)) == 0


def _fdr_brute(efp, alpha):
    # scan a dense set of real thresholds, including every efp value
    best = SelectionSet()
    for t in np.unique(np.concatenate([np.linspace(0, efp.max() + 1, 2001), efp])):
        sel = np.flatnonzero(efp <= t)
        if sel.size and t / sel.size <= alpha:
            best = SelectionSet(tuple(sel))
    return best


@given(arrays(float, st.integers(1, 8), elements=st.sampled_from([0.05, 0.1, 0.3, 0.5, 1, 2, 4, 8])),
       st.sampled_from([0.0, 0.05, 0.1, 0.2, 0.3, 0.5]))
def test_select_fdr_equals_exhaustive_scan(efp, alpha):
    assert select_fdr(efp, alpha) == _fdr_brute(efp, alpha)


@given(arrays(float, 6, elements=st.floats(0.01, 6)), st.floats(0, 6), st.floats(0, 6))
def test_select_at_target_nested(efp, t1, t2):
    lo, hi = sorted((t1, t2))
    assert select_at_target(efp, lo) <= select_at_target(efp, hi)


@given(arrays(float, (5, 7), elements=probs), st.floats(0.5, 1.0, exclude_min=True))
def test_ss_max_equals_brute_force(pi, gamma):
    expect = {j for j in range(5) if max(pi[j]) >= gamma}
    assert set(ss_max_select(pi, gamma)) == expect


def test_ss_max_examples():
    pi = np.array([[0.2, 0.8, 0.5], [0.99, 0.1, 0.0]])
    assert ss_max_select(pi, 0.6) == SelectionSet((0, 1))
    assert len(ss_max_select(pi, 1.0)) == 0


# ---------------------------------------------------------------- truncation and report


def test_truncate_by_qhat():
    np.testing.assert_array_equal(truncate_by_qhat(np.array([0, 1, 6, 2, 9]), 10), [1, 1, 0, 0, 0])
    np.testing.assert_array_equal(truncate_by_qhat(np.array([0, 1, 6]), 10, None), [1, 1, 1])
    np.testing.assert_array_equal(truncate_by_qhat(np.array([7, 8, 9]), 10), [1, 0, 0])


def _events(pattern, G=4):
    # pattern: list over runs of per-feature first selected grid index (None = never)
    runs, p = len(pattern), len(pattern[0])
    ev = np.zeros((runs, G, p), dtype=bool)
    for r, row in enumerate(pattern):
        for j, first in enumerate(row):
            if first is not None:
                ev[r, first:, j] = True
    return SelectionEvents(ev, 5, tuple((np.arange(5), np.arange(5, 10)) for _ in range(runs // 2)),
                           LambdaGrid.geometric(1.0, G, "lasso"))


def test_efp_report_end_to_end_and_csv(tmp_path):
    ev = _events([[0, 2, None], [0, 3, None], [0, None, 3], [1, 2, None]])
    curves = curves_from_events(ev)
    rep = efp_report(curves, ev, 1.0, None, ("a", "b", "c"))
    w = measure_weights(ev.grid, 1.0).weights
    np.testing.assert_allclose(rep.weights, w)
    np.testing.assert_allclose(rep.integral_scores, integral_scores(curves.pi_hat, w))
    C = efp_bound_constant(qhat_curve(ev), w, 2, 3)
    assert rep.bound_constant == pytest.approx(C)
    np.testing.assert_allclose(rep.efp, efp_scores(rep.integral_scores, C, 3))
    path = tmp_path / "r.csv"
    rep.to_csv(path, rep.select_at_target(1.0))
    lines = path.read_text().splitlines()
    assert lines[0] == "name,integral_score,efp,selected"
    assert lines[1].startswith("a,") and lines[1].endswith(",1")
    assert lines[-1].startswith("c,")
