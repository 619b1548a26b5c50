import numpy as np
import pytest

from conftest import random_net
from navsafe.mlp import Mlp, MlpSpec, augment_with_margin, forward_batch
from navsafe.properties import Box, Property, PropertySet, navigation_property_set, property_violation
from navsafe.verify import (
    BoxVerdict, bounds_batch, compare_estimator, decide_box, formal_violation, interval_forward,
    linear_bounds_batch, write_rows,
)


def const_net(values, n_in=2):
    return Mlp(MlpSpec((n_in, len(values))), [np.zeros((n_in, len(values)))], [np.asarray(values, float)])


def threshold_net():
    """y0 = x, y1 = 1 - x on [0, 1]: action 0 wins (ties included) for x >= 0.5."""
    return Mlp(MlpSpec((1, 2)), [np.array([[1.0, -1.0]])], [np.array([0.0, 1.0])])


def small_relu_net(seed=0):
    return random_net(seed, (2, 8, 8, 3), bias_scale=0.3)


# ---------------------------------------------------------------- bounds
def test_point_box_collapses_to_forward():
    net = random_net(1)
    x = np.random.default_rng(0).uniform(0, 1, 13)
    lo, hi = bounds_batch(net, x[None], x[None])
    y = forward_batch(net, x[None])
    np.testing.assert_allclose(lo, y, atol=1e-10)
    np.testing.assert_allclose(hi, y, atol=1e-10)


def test_linear_analytic_bounds():
    net = Mlp(MlpSpec((1, 1)), [np.array([[2.0]])], [np.zeros(1)])
    lo, hi = bounds_batch(net, np.array([[-1.0]]), np.array([[1.0]]))
    assert lo[0, 0] == pytest.approx(-2.0, abs=1e-10) and hi[0, 0] == pytest.approx(2.0, abs=1e-10)
    assert lo[0, 0] <= -2.0 and hi[0, 0] >= 2.0


@pytest.mark.parametrize("bound", [bounds_batch, linear_bounds_batch])
def test_bounds_contain_sampled_outputs(bound):
    rng = np.random.default_rng(2)
    for case in range(100):
        net = random_net(case, (13, 16, 16, 5), bias_scale=0.5)
        c = rng.uniform(-1, 1, 13)
        r = rng.uniform(0, 0.3, 13)
        lo, hi = bound(net, (c - r)[None], (c + r)[None])
        pts = c - r + 2 * r * rng.random((1000, 13))
        y = forward_batch(net, pts)
        assert np.all(y >= lo) and np.all(y <= hi)


def test_linear_bounds_no_looser_than_intervals():
    rng = np.random.default_rng(3)
    net = random_net(4)
    c = rng.uniform(0, 1, (20, 13))
    lo, hi = c - 0.05, c + 0.05
    il, ih = bounds_batch(net, lo, hi)
    ll, lh = linear_bounds_batch(net, lo, hi)
    assert np.all(ll >= il) and np.all(lh <= ih)


def test_interval_forward_margin_column_is_exact_zero():
    b = interval_forward(augment_with_margin(random_net(5), 2), navigation_property_set()[0].pre)
    assert b.lo[2] == 0.0 and b.hi[2] == 0.0 and np.all(b.lo <= b.hi)


# -------------------------------------------------------------- decisions
def test_decide_box_cases():
    box = Box([0.0, 0.0], [1.0, 1.0])
    assert decide_box(augment_with_margin(const_net([1.0, 5.0, 2.0]), 1), box) is BoxVerdict.ALL_VIOLATED
    assert decide_box(augment_with_margin(const_net([1.0, 5.0, 2.0]), 0), box) is BoxVerdict.NONE_VIOLATED
    # tie counts as selecting k
    assert decide_box(augment_with_margin(const_net([3.0, 3.0]), 0), box) is BoxVerdict.ALL_VIOLATED
    one = Box([0.0], [1.0])
    assert decide_box(augment_with_margin(threshold_net(), 0), one) is BoxVerdict.UNKNOWN


# -------------------------------------------------------- branch and bound
def test_constant_argmax_is_fully_violated_in_one_box():
    res = formal_violation(const_net([0.0, 9.0, 1.0]), Property(Box([0, 0], [1, 1]), 1))
    assert res.violation_lower == res.violation_upper == 1.0 and res.boxes_explored == 1


def test_threshold_net_brackets_half():
    res = formal_violation(threshold_net(), Property(Box([0.0], [1.0]), 0), gap=0.005)
    assert res.violation_lower <= 0.5 <= res.violation_upper
    assert res.gap <= 0.005 and not res.budget_exhausted


def test_measure_conservation_every_batch():
    seen = []
    formal_violation(small_relu_net(), Property(Box([-1, -1], [1, 1]), 0), gap=0.01, batch=64,
                     trace=lambda v, s, u: seen.append((v, s, u)))
    assert len(seen) > 3
    for v, s, u in seen:
        assert abs(v + s + u - 1.0) <= 1e-12


def test_gap_shrinks_with_budget():
    prop = Property(Box([-1, -1], [1, 1]), 1)
    gaps = [formal_violation(small_relu_net(1), prop, gap=1e-4, max_boxes=n, batch=32).gap
            for n in (1, 50, 500, 5000)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < gaps[0]


def test_estimate_brackets_formal_bounds():
    net = small_relu_net(2)
    prop = Property(Box([-1, -1], [1, 1]), 2)
    res = formal_violation(net, prop, gap=0.002)
    assert not res.budget_exhausted
    m = 1_000_000
    est = property_violation(net, prop, m, np.random.default_rng(0))
    sigma = np.sqrt(max(est * (1 - est), 1e-12) / m)
    assert res.violation_lower - 3 * sigma <= est <= res.violation_upper + 3 * sigma
    assert 0.02 < res.midpoint < 0.98  # non-trivial instance


def test_point_precondition_on_a_tie_uses_degenerate_guard():
    # at x = 0.5 both outputs are equal; outward rounding leaves the box undecided
    res = formal_violation(threshold_net(), Property(Box([0.5], [0.5]), 0))
    assert res.degenerate and res.degenerate_measure == 1.0
    assert res.violation_lower == res.violation_upper == 1.0  # tie counts as violated


def test_point_precondition_decided_without_guard():
    res = formal_violation(threshold_net(), Property(Box([0.2], [0.2]), 0))
    assert not res.degenerate and res.violation_upper == 0.0


def test_budget_exhaustion_is_flagged():
    res = formal_violation(random_net(6), navigation_property_set()[0], max_boxes=200, batch=64)
    assert res.budget_exhausted and res.boxes_explored == 200
    assert 0.0 <= res.violation_lower <= res.violation_upper <= 1.0


def test_linear_method_is_sound_on_threshold_net():
    res = formal_violation(threshold_net(), Property(Box([0.0], [1.0]), 0), method="linear")
    assert res.violation_lower <= 0.5 <= res.violation_upper and res.gap <= 0.005


@pytest.mark.parametrize("kw", [{"gap": 0.0}, {"gap": 1.0}, {"max_boxes": 0}, {"method": "zonotope"}])
def test_formal_argument_errors(kw):
    with pytest.raises(ValueError):
        formal_violation(threshold_net(), Property(Box([0.0], [1.0]), 0), **kw)


# ------------------------------------------------------------- comparison
def test_compare_estimator_rows(tmp_path):
    ps = PropertySet([Property(Box([0.0], [1.0]), 0, name="half")])
    rows = compare_estimator(threshold_net(), ps, m_values=(100, 1000), gap=0.005, seed=3)
    assert len(rows) == 1
    d = rows[0].as_dict()
    assert d["property"] == "half" and set(d) >= {"estimate_100", "estimate_1000", "formal_mid"}
    assert abs(d["estimate_1000"] - 0.5) < 0.06
    out = write_rows([d], tmp_path / "c.csv")
    assert out.read_text().splitlines()[0].startswith("property,")
    with pytest.raises(ValueError):
        compare_estimator(threshold_net(), PropertySet(), m_values=(10,))
