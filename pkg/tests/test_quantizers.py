import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxconnect import quantizers as Q

TERNARY = Q.make_grid([-1, 0, 1])
BINARY = Q.make_grid([-1, 1])


# -- grids and projection ---------------------------------------------------


def test_binary_grid_midpoint():
    assert Q.make_grid([-1, 1]).midpoints == (0.0,)


def test_quaternary_grid_midpoints():
    assert Q.make_grid([-1, -0.3, 0.3, 1]).midpoints == pytest.approx((-0.65, 0.0, 0.65), abs=1e-15)


def test_unsorted_levels_are_sorted():
    assert Q.make_grid([1, -1, 0]).levels == (-1.0, 0.0, 1.0)


@pytest.mark.parametrize("levels", [[1, 1], [0], [], [0, math.inf], [0, math.nan]])
def test_bad_levels_rejected(levels):
    with pytest.raises(ValueError):
        Q.make_grid(levels)


@pytest.mark.parametrize("w,expected", [(0.2, 1.0), (0.0, 1.0), (-0.2, -1.0)])
def test_project_binary(w, expected):
    assert Q.project(BINARY, w) == expected


def test_project_ternary_nearest():
    assert Q.project(TERNARY, -0.7) == -1.0


def test_project_lower_tie():
    assert Q.project(BINARY, 0.0, tie="lower") == -1.0


def test_project_rejects_nan():
    with pytest.raises(ValueError):
        Q.project(BINARY, np.array([0.0, np.nan]))


# -- piecewise-linear quantizer ----------------------------------------------


def test_plq_inner_piece_value():
    plq = Q.PiecewiseLinearQuantizer(TERNARY, rho=0.2, varrho=0.0)
    assert Q.apply_plq(plq, 0.35) == pytest.approx(0.25, abs=1e-15)


def test_plq_matches_binary_relax_point():
    plq = Q.PiecewiseLinearQuantizer(Q.make_grid([0, 1]), rho=0.0, varrho=0.25)
    assert Q.apply_plq(plq, 0.6) == pytest.approx(0.8, abs=1e-15)


def test_plq_large_shifts_project():
    plq = Q.PiecewiseLinearQuantizer(TERNARY, rho=1e6, varrho=1e6)
    assert Q.apply_plq(plq, 0.49) == 0.0


@pytest.mark.parametrize("rho,varrho", [(0.0, 0.0), (0.1, 0.3), (0.5, 0.5), (2.0, 0.0)])
def test_levels_are_fixed_points(rho, varrho):
    grid = Q.make_grid([-1, -0.3, 0.3, 1])
    plq = Q.PiecewiseLinearQuantizer(grid, rho, varrho)
    assert np.array_equal(plq(grid.q), grid.q)


def test_zero_shifts_are_identity_on_hull():
    plq = Q.PiecewiseLinearQuantizer(TERNARY, 0.0, 0.0)
    x = np.linspace(-1, 1, 1001)
    np.testing.assert_allclose(plq(x), x, atol=1e-15)


def test_shifted_points_are_capped_at_midpoints():
    qm, qp, pm, pp = Q.PiecewiseLinearQuantizer(TERNARY, 0.8, 0.8).shifted_points()
    np.testing.assert_array_equal(qp, [-0.5, 0.5, 1.0])
    np.testing.assert_array_equal(qm, [-1.0, -0.5, 0.5])
    np.testing.assert_array_equal(pm, [-1.0, 0.0])
    np.testing.assert_array_equal(pp, [0.0, 1.0])


def test_midpoint_policy():
    up = Q.PiecewiseLinearQuantizer(BINARY, 0.1, 0.2)
    lo = Q.PiecewiseLinearQuantizer(BINARY, 0.1, 0.2, midpoint_policy="lower")
    assert up(0.0) == pytest.approx(0.2)
    assert lo(0.0) == pytest.approx(-0.2)


def test_clip_versus_extension():
    clipped = Q.PiecewiseLinearQuantizer(BINARY, 0.2, 0.2)
    free = Q.PiecewiseLinearQuantizer(BINARY, 0.2, 0.2, clip=False)
    assert clipped(3.0) == 1.0
    assert free(1.1) == 1.0  # plateau of width rho beyond the last level
    assert free(3.0) == pytest.approx(1.0 + 1.8 * (0.8 / 0.8))


def test_negative_shift_rejected():
    with pytest.raises(ValueError):
        Q.PiecewiseLinearQuantizer(BINARY, -0.1, 0.0)


@settings(max_examples=200, deadline=None)
@given(rho=st.floats(0, 3), varrho=st.floats(0, 3), clip=st.booleans(),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_plq_monotone(rho, varrho, clip, a, b):
    plq = Q.PiecewiseLinearQuantizer(Q.make_grid([-1, -0.3, 0.3, 1]), rho, varrho, clip)
    lo, hi = min(a, b), max(a, b)
    assert plq(lo) <= plq(hi) + 1e-12


@settings(max_examples=100, deadline=None)
@given(s=st.floats(0.01, 100), x=st.floats(-2, 2))
def test_sharpness_scales_shifts(s, x):
    plq = Q.PiecewiseLinearQuantizer(TERNARY, 0.05, 0.1)
    spec = Q.PiecewiseLinear(plq)
    assert spec(np.array([x]), s)[0] == Q.PiecewiseLinearQuantizer(TERNARY, 0.05 * s, 0.1 * s)(x)


def test_infinite_sharpness_projects():
    spec = Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(TERNARY, 0.05, 0.1))
    x = np.array([-0.7, -0.2, 0.3, 0.9])
    np.testing.assert_array_equal(spec(x, math.inf), Q.project(TERNARY, x))


# -- Example 4.3 map ----------------------------------------------------------


def test_example43_value():
    assert Q.example43_map(0.5, 1.0, 0.5) == pytest.approx(0.8333333333333334, abs=1e-15)


@pytest.mark.parametrize("eps,mu", [(0.5, 1.0), (2.0, 0.1), (0.1, 50.0)])
def test_example43_boundary_fixed_point(eps, mu):
    assert Q.example43_map(eps, mu, 1.0) == 1.0
    assert Q.example43_map(eps, mu, -1.0) == -1.0


def test_example43_small_mu_tends_to_sign():
    vals = [Q.example43_map(0.5, mu, 0.5) for mu in (1.0, 1e-2, 1e-4, 1e-8)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(1.0, abs=1e-7)
    assert Q.Example43(0.5, 1.0)(np.array([0.5, -0.2]), math.inf).tolist() == [1.0, -1.0]


def test_example43_large_mu_tends_to_identity():
    assert Q.example43_map(0.5, 1e9, 0.5) == pytest.approx(0.5, abs=1e-8)


def test_example43_rejects_bad_parameters():
    with pytest.raises(ValueError):
        Q.example43_map(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        Q.example43_map(0.5, 0.0, 0.5)


# -- specs and combinators ----------------------------------------------------


@pytest.mark.parametrize("s", [0.1, 1.0, 7.0, math.inf])
def test_identity_spec(s):
    w = {"a": np.array([0.3, -1.7]), "b": np.array([[2.0]])}
    out = Q.apply(Q.Identity(), w, s)
    for k in w:
        np.testing.assert_array_equal(out[k], w[k])


def test_average_realizes_binary_relax():
    avg = Q.Average(((0.5, Q.Identity()), (0.5, Q.Projector(BINARY))))
    assert Q.apply(avg, {"w": np.array([0.6])})["w"][0] == pytest.approx(0.8, abs=1e-15)


def test_average_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        Q.Average(((0.5, Q.Identity()), (0.4, Q.Projector(BINARY))))


def test_per_group_product():
    spec = Q.PerGroup({"A": Q.Projector(BINARY), "B": Q.Identity()})
    w = {"A": np.array([0.2, -0.4]), "B": np.array([0.2, -0.4])}
    out = Q.apply(spec, w)
    np.testing.assert_array_equal(out["A"], [1.0, -1.0])
    np.testing.assert_array_equal(out["B"], w["B"])


def test_per_group_mismatch_rejected():
    spec = Q.PerGroup({"A": Q.Identity()})
    with pytest.raises(ValueError):
        Q.apply(spec, {"B": np.zeros(1)})


def test_apply_rejects_nonfinite():
    with pytest.raises(ValueError, match="group 'w'"):
        Q.apply(Q.Identity(), {"w": np.array([np.inf])})


def test_random_select_is_seeded():
    rs = Q.RandomSelect((Q.Projector(TERNARY), Q.Identity()), seed=5)
    assert [rs.index(k) for k in range(50)] == [rs.index(k) for k in range(50)]
    x = np.array([0.3])
    assert rs(x, 1.0, draw=7)[0] == rs.choices[rs.index(7)](x)[0]


def test_binary_relax_closed_form():
    x = np.linspace(-2, 2, 101)
    np.testing.assert_allclose(Q.BinaryRelax(TERNARY, 2.0)(x), (x + 2 * Q.project(TERNARY, x)) / 3, atol=1e-15)


def test_binary_relax_sharpness_multiplies_mu():
    x = np.array([0.3])
    assert Q.BinaryRelax(TERNARY, 2.0)(x, 3.0)[0] == pytest.approx((0.3 + 6 * 0.0) / 7)


def test_shrink():
    assert Q.Shrink(0.5)(np.array([3.0]), 2.0)[0] == pytest.approx(1.5)


def test_hard_quantize_skips_identity_groups():
    spec = Q.PerGroup({"A": Q.BinaryRelax(TERNARY, 1.0), "B": Q.Identity()})
    out = Q.hard_quantize(spec, {"A": np.array([0.4, -0.6]), "B": np.array([0.4])})
    np.testing.assert_array_equal(out["A"], [0.0, -1.0])
    np.testing.assert_array_equal(out["B"], [0.4])


# -- axiom checker ------------------------------------------------------------


PROBES = np.linspace(-2, 2, 10_000)


def test_axioms_hold_for_piecewise_linear():
    spec = Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(Q.make_grid([-1, -0.3, 0.3, 1]), 0.1, 0.2))
    rep = Q.check_prox_axioms(spec, PROBES)
    assert rep.ok and rep.monotonicity_violations == 0 and rep.jumps > 0


def test_axioms_flag_decreasing_map():
    rep = Q.check_prox_axioms(lambda w, s=1.0: -w, PROBES)
    assert rep.monotonicity_violations > 0 and not rep.ok


def test_axioms_flag_open_graph():
    # jump whose value at the discontinuity lies outside the one-sided limits
    def bad(w, s=1.0):
        w = np.asarray(w, dtype=float)
        return np.where(w == 0.0, 5.0, np.sign(w))
    rep = Q.check_prox_axioms(bad, np.linspace(-1, 1, 2001))
    assert not rep.ok


def test_axioms_hold_for_average():
    avg = Q.Average(((0.3, Q.Projector(TERNARY)), (0.7, Q.BinaryRelax(TERNARY, 0.5))))
    assert Q.check_prox_axioms(avg, PROBES).ok


def test_axioms_flag_moved_level():
    def shifted(w, s=1.0):
        return np.asarray(w, dtype=float) + 0.1
    spec = Q.PiecewiseLinear(Q.PiecewiseLinearQuantizer(TERNARY))

    class Wrapped:
        grid = TERNARY

        def __call__(self, w, s=1.0, draw=0):
            return shifted(spec(w, s))

    assert Q.check_prox_axioms(Wrapped(), PROBES).fixed_point_violations > 0
