import numpy as np
import pytest

from martquant.errors import DomainError
from martquant.lp import LinearProgram, LpSolution, export_lp_text, solve
from martquant.rng import make_generator


def test_single_variable():
    sol = solve(LinearProgram([1.0], [[1.0]], [3.0]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-12)
    assert sol.objective_value == pytest.approx(3.0, abs=1e-12)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-9)


def test_infeasible_with_farkas():
    # x1 + x2 = 1 and x1 - x2 = 3 force x2 = -1 < 0
    lp = LinearProgram([0.0, 0.0], [[1.0, 1.0], [1.0, -1.0]], [1.0, 3.0])
    sol = solve(lp)
    assert sol.status == "infeasible"
    y = sol.farkas
    assert y @ lp.rhs > 1e-9
    assert np.all(y @ lp.constraint_matrix <= 1e-9)


def test_transportation_2x2():
    cost = np.array([0.0, 1.0, 1.0, 0.0])
    a = np.array(
        [[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=float
    )
    b = np.array([0.5, 0.5, 0.5, 0.5])
    sol = solve(LinearProgram(cost, a, b))
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sol.x, [0.5, 0.0, 0.0, 0.5], atol=1e-10)


def test_unbounded():
    sol = solve(LinearProgram([-1.0, 0.0], [[0.0, 1.0]], [1.0]))
    assert sol.status == "unbounded"


def test_max_sense():
    # max x subject to x + s = 2
    sol = solve(LinearProgram([1.0, 0.0], [[1.0, 1.0]], [2.0], sense="max"))
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(2.0, abs=1e-12)


def test_weak_duality_and_feasibility_random():
    gen = make_generator(0)
    for _ in range(60):
        m = int(gen.integers(2, 6))
        n = int(gen.integers(3, 9))
        a = gen.normal(size=(m, n))
        b = a @ gen.random(n)
        c = np.abs(gen.normal(size=n))
        sol = solve(LinearProgram(c, a, b))
        assert sol.status == "optimal"
        assert sol.primal_residual < 1e-8
        assert sol.slackness_residual < 1e-7
        assert sol.duals @ b <= sol.objective_value + 1e-7


def test_determinism():
    gen = make_generator(9)
    a = gen.normal(size=(4, 7))
    b = a @ gen.random(7)
    c = np.abs(gen.normal(size=7))
    lp = LinearProgram(c, a, b)
    s1, s2 = solve(lp), solve(lp)
    assert s1.iterations == s2.iterations
    assert np.array_equal(s1.x, s2.x)
    assert np.array_equal(s1.duals, s2.duals)


def test_iteration_limit():
    gen = make_generator(4)
    a = gen.normal(size=(5, 12))
    b = a @ gen.random(12)
    c = np.abs(gen.normal(size=12))
    sol = solve(LinearProgram(c, a, b), max_iter=1)
    assert sol.status == "iteration_limit"


def test_dimension_validation():
    with pytest.raises(DomainError):
        LinearProgram([1.0, 2.0], [[1.0]], [1.0])
    with pytest.raises(DomainError):
        LinearProgram([np.inf], [[1.0]], [1.0])
    with pytest.raises(DomainError):
        LinearProgram([1.0], [[1.0]], [1.0], sense="solve")


def test_basis_hint_accepts_and_falls_back():
    a = np.array([[1.0, 1.0]])
    b = np.array([1.0])
    c = np.array([1.0, 2.0])
    good = solve(LinearProgram(c, a, b), basis_hint=[0])
    assert good.status == "optimal" and good.objective_value == pytest.approx(1.0)
    bad = solve(LinearProgram(c, a, b), basis_hint=[5])  # invalid index: fallback
    assert bad.status == "optimal" and bad.objective_value == pytest.approx(1.0)


def test_hinted_coupling_duals_satisfy_strong_duality():
    from martquant.order import DiscreteDistribution, coupling_lp

    gen = make_generator(40)
    ys = np.sort(gen.normal(size=10))
    w = gen.random(10)
    w /= w.sum()
    nu = DiscreteDistribution(ys, w)
    groups = np.array_split(np.arange(10), 4)
    mu = DiscreteDistribution(
        [float(np.average(ys[g], weights=w[g])) for g in groups],
        [float(w[g].sum()) for g in groups],
    )
    a, b, _, hint, _ = coupling_lp(mu, nu)
    cost = np.abs(ys[None, :] - mu.points_1d[:, None]).ravel()
    for sense in ("min", "max"):
        sol = solve(LinearProgram(cost, a, b, sense=sense), basis_hint=hint)
        assert sol.status == "optimal"
        assert sol.primal_residual < 1e-8
        assert sol.slackness_residual < 1e-7
        # strong duality at the optimum
        assert sol.duals @ b == pytest.approx(sol.objective_value, abs=1e-7)


def test_export_lp_text_golden():
    lp = LinearProgram([1.0, -0.5], [[1.0, 2.0]], [3.0], sense="min")
    text = export_lp_text(lp, name="tiny")
    assert text == (
        "\\ tiny\n"
        "Minimize\n"
        " obj: + 1 x0 - 0.5 x1\n"
        "Subject To\n"
        " c0: + 1 x0 + 2 x1 = 3\n"
        "Bounds\n"
        " 0 <= x0\n"
        " 0 <= x1\n"
        "End\n"
    )
    # byte stability
    assert export_lp_text(lp, name="tiny") == text


def test_solution_dataclass_shape():
    sol = solve(LinearProgram([1.0], [[1.0]], [2.0]))
    assert isinstance(sol, LpSolution)
    assert sol.farkas is None
