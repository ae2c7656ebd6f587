import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from martquant.errors import DimensionMismatch, DivisibilityError, DomainError
from martquant.laws import Exponential, Normal, PointMass, PowerDensity2x, Uniform
from martquant.order import (
    ConvexTestBattery,
    DiscreteDistribution,
    MaxAffineFunction,
    abs_deviation,
    baker_chain_check,
    baker_grid,
    call_payoff,
    convex_order_check,
    moment_vs_wasserstein_scan,
    path_max_call,
    ramp_law_dominating_family,
    wasserstein2_1d,
)
from martquant.rng import make_generator


def _contract(nu: DiscreteDistribution, n_groups: int) -> DiscreteDistribution:
    """Conditional-expectation coarsening: guaranteed dominated by nu."""
    srt = nu.sorted_1d()
    groups = np.array_split(np.arange(srt.n_atoms), n_groups)
    pts = [float(np.average(srt.points_1d[g], weights=srt.weights[g])) for g in groups]
    ws = [float(srt.weights[g].sum()) for g in groups]
    return DiscreteDistribution(pts, ws)


def test_trivial_domination_cases():
    d0 = DiscreteDistribution([0.0], [1.0])
    pm = DiscreteDistribution([-1.0, 1.0], [0.5, 0.5])
    assert convex_order_check(d0, pm).dominated
    res = convex_order_check(pm, d0)
    assert res.status == "not_dominated"
    # |x| separates: E|X| = 1 under pm, 0 under delta_0
    assert res.witness_gap > 0.5
    shifted = DiscreteDistribution([0.1], [1.0])
    res2 = convex_order_check(shifted, pm)
    assert res2.status == "not_dominated"
    assert res2.witness is not None  # affine witness from the mean gap


def test_reflexive():
    mu = DiscreteDistribution([0.0, 1.0, 3.0], [0.2, 0.5, 0.3])
    assert convex_order_check(mu, mu).dominated


def test_dominated_implies_moment_inequalities():
    gen = make_generator(17)
    for _ in range(5):
        m = int(gen.integers(4, 9))
        nu = DiscreteDistribution(np.sort(gen.normal(size=m)), np.full(m, 1.0 / m))
        mu = _contract(nu, 3)
        res = convex_order_check(mu, nu)
        assert res.dominated
        assert abs(mu.mean[0] - nu.mean[0]) < 1e-9
        assert mu.second_moment <= nu.second_moment + 1e-9


def test_witness_is_valid_separator():
    gen = make_generator(23)
    for _ in range(5):
        # unrelated distributions with matched means: usually not dominated
        a = np.sort(gen.normal(size=5))
        wa = gen.random(5)
        wa /= wa.sum()
        mu = DiscreteDistribution(a - np.average(a, weights=wa), wa)
        b = np.sort(gen.normal(size=4)) * 0.3
        wb = gen.random(4)
        wb /= wb.sum()
        nu = DiscreteDistribution(b - np.average(b, weights=wb), wb)
        res = convex_order_check(mu, nu)
        if res.status == "not_dominated":
            w = res.witness
            gap = mu.expectation(w) - nu.expectation(w)
            assert gap > 0.0
            assert gap == pytest.approx(res.witness_gap, rel=1e-9)


def test_transitivity_spot_check():
    gen = make_generator(5)
    for _ in range(4):
        m = 8
        nu = DiscreteDistribution(np.sort(gen.normal(size=m)), np.full(m, 1.0 / m))
        mid = _contract(nu, 4)
        mu = _contract(mid, 2)
        assert convex_order_check(mu, mid).dominated
        assert convex_order_check(mid, nu).dominated
        assert convex_order_check(mu, nu).dominated


def _call_price_order_oracle(mu: DiscreteDistribution, nu: DiscreteDistribution) -> bool:
    """1D oracle: with equal means, domination holds iff every call price
    E(X - k)+ is weakly larger under nu; kinks at the atoms suffice."""
    if abs(mu.mean[0] - nu.mean[0]) > 1e-11:
        return False
    strikes = np.concatenate([mu.points_1d, nu.points_1d])
    for k in strikes:
        a = float(mu.weights @ np.maximum(mu.points_1d - k, 0.0))
        b = float(nu.weights @ np.maximum(nu.points_1d - k, 0.0))
        if a > b + 1e-11:
            return False
    return True


def test_convex_order_check_against_call_price_oracle():
    gen = make_generator(404)
    agree = 0
    for trial in range(120):
        m = int(gen.integers(3, 9))
        pts = np.unique(np.round(gen.normal(size=m), 6))
        if pts.size < 2:
            continue
        w = gen.random(pts.size)
        w /= w.sum()
        nu = DiscreteDistribution(pts, w)
        if trial % 3 == 0:
            mu = _contract(nu, int(gen.integers(1, pts.size)))
        elif trial % 3 == 1:
            # recentered squeeze of nu: dominated iff the oracle says so
            lam = float(gen.uniform(0.5, 1.5))
            center = nu.mean[0]
            mu = DiscreteDistribution(center + lam * (pts - center), w)
        else:
            qts = np.unique(np.round(gen.normal(size=int(gen.integers(2, 7))), 6))
            if qts.size < 2:
                continue
            v = gen.random(qts.size)
            v /= v.sum()
            shift = nu.mean[0] - float(v @ qts)
            mu = DiscreteDistribution(qts + shift, v)
        got = convex_order_check(mu, nu).dominated
        want = _call_price_order_oracle(mu, nu)
        assert got == want, (mu.to_json(), nu.to_json())
        agree += 1
    assert agree > 100  # the generator produced enough valid cases


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        convex_order_check(
            DiscreteDistribution([[0.0, 0.0]], [1.0]), DiscreteDistribution([0.0], [1.0])
        )


def test_convex_order_2d():
    mu = DiscreteDistribution([[0.0, 0.0]], [1.0])
    nu = DiscreteDistribution([[1.0, 1.0], [-1.0, -1.0]], [0.5, 0.5])
    assert convex_order_check(mu, nu).dominated
    assert convex_order_check(nu, mu).status == "not_dominated"


# ---------------------------------------------------------------------------
# Baker grids


def test_baker_uniform_atoms():
    dd = baker_grid(Uniform(0, 1), 2)
    assert np.allclose(dd.points_1d, [0.25, 0.75])
    assert np.allclose(dd.weights, [0.5, 0.5])
    for n in (3, 7):
        got = baker_grid(Uniform(0, 1), n).points_1d
        assert np.allclose(got, (2 * np.arange(1, n + 1) - 1) / (2 * n), atol=1e-12)


def test_baker_single_atom_is_mean():
    for law in (Normal(1.4, 2.0), Exponential(0.7), PowerDensity2x()):
        dd = baker_grid(law, 1)
        assert dd.points_1d[0] == pytest.approx(law.mean, abs=1e-12)


def test_baker_matches_quadrature_oracle():
    law = PowerDensity2x()
    n = 5
    dd = baker_grid(law, n)
    for i in range(n):
        oracle = n * quad(lambda u: math.sqrt(u), i / n, (i + 1) / n)[0]
        assert dd.points_1d[i] == pytest.approx(oracle, abs=1e-10)


def test_baker_mean_preserving_and_sorted():
    for law in (Normal(0.3, 1.7), Exponential(2.0), Uniform(-3, 5)):
        dd = baker_grid(law, 8)
        assert np.all(np.diff(dd.points_1d) >= 0)
        assert dd.mean[0] == pytest.approx(law.mean, abs=1e-10)


def test_baker_point_mass_merges():
    dd = baker_grid(PointMass(2.0), 4)
    assert dd.n_atoms == 1 and dd.points_1d[0] == 2.0


def test_baker_chain_check():
    assert baker_chain_check([Uniform(0, 1), Uniform(-1, 2)], [2, 4]) is True
    assert baker_chain_check([Uniform(0, 1), Uniform(0, 1), Uniform(0, 1)], [3, 3, 3]) is True
    assert baker_chain_check([Uniform(-1, 2), Uniform(0, 1)], [2, 4]) is False
    with pytest.raises(DivisibilityError):
        baker_chain_check([Uniform(0, 1), Uniform(-1, 2)], [3, 4])
    # warn mode tolerates the ratio violation
    assert baker_chain_check(
        [Uniform(0, 1), Uniform(-1, 2)], [3, 4], on_violation="warn"
    ) in (True, False)


# ---------------------------------------------------------------------------
# Wasserstein distance


def test_wasserstein_basics():
    d0 = DiscreteDistribution([0.0], [1.0])
    d1 = DiscreteDistribution([1.0], [1.0])
    assert wasserstein2_1d(d0, d1) == pytest.approx(1.0, abs=1e-14)
    a = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
    assert wasserstein2_1d(a, a) == 0.0
    b = DiscreteDistribution([0.0, 2.0], [0.5, 0.5])
    assert wasserstein2_1d(a, b) == pytest.approx(math.sqrt(0.5), abs=1e-14)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=30, deadline=None)
def test_wasserstein_symmetry_and_positivity(seed):
    gen = make_generator(seed, stream=13)
    pts_a = np.unique(np.round(gen.normal(size=4), 6))
    wa = gen.random(pts_a.size)
    wa /= wa.sum()
    pts_b = np.unique(np.round(gen.normal(size=3), 6))
    wb = gen.random(pts_b.size)
    wb /= wb.sum()
    mu = DiscreteDistribution(pts_a, wa)
    nu = DiscreteDistribution(pts_b, wb)
    ab = wasserstein2_1d(mu, nu)
    ba = wasserstein2_1d(nu, mu)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert ab >= 0.0


def test_wasserstein_zero_iff_equal():
    mu = DiscreteDistribution([0.0, 1.0], [0.4, 0.6])
    nu = DiscreteDistribution([0.0, 1.0], [0.6, 0.4])
    assert wasserstein2_1d(mu, nu) > 0.0


# ---------------------------------------------------------------------------
# the ramp-law scan


def test_family_members_dominate_ramp_discretization():
    # the family must dominate the ramp law; check against a Baker grid
    # with the LP (both finite): family with u = 1/3
    mu = baker_grid(PowerDensity2x(), 24)
    nu = ramp_law_dominating_family(1.0 / 3.0)
    # Baker grid of mu is itself dominated by mu's law... the family
    # dominates the law, and domination of the Baker grid is the testable
    # finite statement here.
    assert convex_order_check(mu, nu).dominated


def test_family_closed_forms_match_direct_integrals():
    for u in (0.1, 1 / 3, 0.326, 0.8):
        nu = ramp_law_dominating_family(u)
        m2_direct = nu.second_moment
        su = math.sqrt(u)
        m2_closed = (2 + u ** 1.5 - su) / 3
        assert m2_direct == pytest.approx(m2_closed, abs=1e-12)


def test_family_w2_closed_form_against_quadrature():
    from martquant.order import _family_w2sq

    for u in (0.05, 1 / 3, 0.326, 0.9):
        su = math.sqrt(u)
        a1, a2 = u / 3, (1 + su + u) / 3
        direct = (
            quad(lambda v: v, 0, a1)[0]
            + quad(lambda v: (math.sqrt(v) - su) ** 2, a1, a2)[0]
            + quad(lambda v: (math.sqrt(v) - 1) ** 2, a2, 1)[0]
        )
        assert _family_w2sq(u) == pytest.approx(direct, abs=1e-10)


def test_w2_closed_form_against_discrete_wasserstein():
    # discretize the ramp law finely and compare the distances
    from martquant.order import _family_w2sq

    mu = baker_grid(PowerDensity2x(), 4000)
    for u in (0.2, 1 / 3, 0.326):
        nu = ramp_law_dominating_family(u)
        approx = wasserstein2_1d(mu, nu) ** 2
        assert approx == pytest.approx(_family_w2sq(u), abs=5e-5)


def test_scan_report_values():
    rep = moment_vs_wasserstein_scan(1e-4)
    assert rep.u_star_moment == pytest.approx(1 / 3, abs=1e-4)
    assert rep.u_star_w2 == pytest.approx(0.326, abs=2e-3)
    assert rep.derivative_sign_at_third == 1
    assert rep.u_star_w2 < rep.u_star_moment  # the two minimizers differ


def test_scan_rejects_bad_resolution():
    with pytest.raises(DomainError):
        moment_vs_wasserstein_scan(0.0)


# ---------------------------------------------------------------------------
# batteries


def test_max_affine_eval():
    fn = MaxAffineFunction([0.0, -1.0], [[1.0], [2.0]])
    assert fn(np.array([[0.0], [2.0]])) == pytest.approx([0.0, 3.0])


def test_battery_members_are_convex():
    battery = ConvexTestBattery.random_max_affine(3, count=10, seed=1)
    gen = make_generator(2)
    x = gen.normal(size=(40, 3))
    y = gen.normal(size=(40, 3))
    for lam in (0.25, 0.5, 0.75):
        mid = lam * x + (1 - lam) * y
        vals = battery.evaluate(mid)
        bound = lam * battery.evaluate(x) + (1 - lam) * battery.evaluate(y)
        assert np.all(vals <= bound + 1e-12)


def test_call_and_path_max_helpers():
    c = call_payoff(3, 1, strike=0.5)
    assert c(np.array([[0.0, 2.0, 0.0]]))[0] == pytest.approx(1.5)
    p = path_max_call(3, strike=1.0)
    assert p(np.array([[0.0, 3.0, 2.0]]))[0] == pytest.approx(2.0)
    assert p(np.array([[0.0, 0.5, 0.2]]))[0] == 0.0
    d = abs_deviation(1, [0.5])
    assert d(np.array([[2.0]]))[0] == pytest.approx(1.5)
