import io
import math
import pathlib
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

from slpipe import fixtures, miqp
from slpipe.errors import BudgetExceededError, InfeasibleError, SlpipeError
from slpipe.miqp import (
    BINARY,
    CONTINUOUS,
    MIPModel,
    MissingVariableError,
    build_miqp,
    check_assignment,
    cross_check,
    decode_assignment,
    emit_lp,
    encode_plan,
    lin_bin_product,
    lin_cont_bin_product,
    lin_max,
)
from slpipe.optimizer import Objective, solve_exact
from slpipe.perf_model import PartitionPlan, evaluate_plan
from slpipe.profiles import WorkloadSpec, merge_layers

DATA = pathlib.Path(__file__).parent / "data"


def check_all(m, fixed, extra_vars):
    """Feasibility of every 0/1 assignment of ``fixed`` with derived aux values."""
    out = {}
    for bits in range(2 ** len(fixed)):
        a = {v: float((bits >> k) & 1) for k, v in enumerate(fixed)}
        for name in extra_vars:
            a[name] = float(m.variables[name].define(a))
        out[tuple(a[v] for v in fixed)] = (a, check_assignment(m, a))
    return out


# -- linearization techniques --------------------------------------------------

def test_binary_product_truth_table():
    m = MIPModel()
    m.add_var("x", BINARY, 0, 1)
    m.add_var("y", BINARY, 0, 1)
    f = lin_bin_product(m, "x", "y")
    for (x, y), (a, rep) in check_all(m, ["x", "y"], [f]).items():
        assert rep.feasible
        assert a[f] == x * y
        # flipping the product breaks a constraint
        bad = dict(a, **{f: 1.0 - a[f]})
        assert not check_assignment(m, bad).feasible


def test_continuous_binary_product():
    m = MIPModel()
    m.add_var("x", BINARY, 0, 1)
    m.add_var("y", CONTINUOUS, 2.0, 7.0)
    f = lin_cont_bin_product(m, "x", "y")
    for x in (0.0, 1.0):
        for y in (2.0, 4.5, 7.0):
            a = {"x": x, "y": y, f: x * y}
            assert check_assignment(m, a).feasible
            for wrong in (x * y + 0.5, x * y - 0.5):
                assert not check_assignment(m, dict(a, **{f: wrong})).feasible


def test_product_operand_checks():
    m = MIPModel()
    m.add_var("x", CONTINUOUS, 0, 1)
    m.add_var("y", BINARY, 0, 1)
    m.add_var("u", CONTINUOUS, 0, math.inf)
    with pytest.raises(ValueError):
        lin_bin_product(m, "x", "y")
    with pytest.raises(ValueError):
        lin_cont_bin_product(m, "x", "y")
    with pytest.raises(ValueError):
        lin_cont_bin_product(m, "y", "u")


def test_max_of_three():
    m = MIPModel()
    for name, ub in (("p", 3.0), ("q", 5.0), ("r", 4.0)):
        m.add_var(name, CONTINUOUS, 0, ub)
    f = lin_max(m, ["p", "q", "r"])
    assert m.big_M[f] == 12.0
    sel = [n for n, v in m.variables.items() if v.meaning.get("kind") == "max_selector"]
    a = {"p": 1.0, "q": 5.0, "r": 2.0}
    for name in [f] + sel:
        a[name] = float(m.variables[name].define(a))
    assert a[f] == 5.0
    assert check_assignment(m, a).feasible
    # a value above the true maximum has no selector that can pin it
    for bits in range(8):
        trial = dict(a, **{f: 5.5}, **{s: float((bits >> k) & 1) for k, s in enumerate(sel)})
        assert not check_assignment(m, trial).feasible


def test_max_ties_are_feasible():
    m = MIPModel()
    m.add_var("p", CONTINUOUS, 0, 2)
    m.add_var("q", CONTINUOUS, 0, 2)
    f = lin_max(m, ["p", "q"], H=10.0)
    assert m.big_M[f] == 10.0
    a = {"p": 1.5, "q": 1.5}
    for name in list(m.variables)[2:]:
        a[name] = float(m.variables[name].define(a))
    assert check_assignment(m, a).feasible


def test_constraint_rejects_undeclared():
    m = MIPModel()
    with pytest.raises(ValueError):
        m.add_constraint([(1.0, "ghost")], "<=", 1.0)


# -- formulation ---------------------------------------------------------------------

def test_two_layer_structure(two_layer):
    m = build_miqp(*two_layer, Objective(1, 2**16))
    for name in ("x_1", "y_1", "z_1_1", "z_2_1", "t_iter", "c_mem"):
        assert name in m.variables
    assert "x_2" not in m.variables
    names = {c.name for c in m.constraints}
    assert {"one_dp", "one_mem_1", "one_mem_2", "memory_1", "memory_2"} <= names
    assert m.objective_quadratic == [(1.0, "t_iter", "c_mem")]
    assert all(math.isfinite(h) and h > 0 for h in m.big_M.values())


def test_golden_lp(two_layer):
    text = emit_lp(build_miqp(*two_layer, Objective(1, 2**16)))
    assert text == (DATA / "two_layer_j1_k1.lp").read_text()


def test_emit_is_deterministic(small):
    a = emit_lp(build_miqp(*small, Objective(1, 2**19)))
    sink = io.StringIO()
    b = emit_lp(build_miqp(*small, Objective(1, 2**19)), sink)
    assert a == b == sink.getvalue()
    assert all(len(line) <= 200 for line in a.splitlines())


def test_emit_empty_model():
    m = MIPModel()
    m.add_var("t", CONTINUOUS, 0, 5)
    m.objective_linear.append((1.0, "t"))
    text = emit_lp(m)
    assert text == ("\\ linearized partition/resource co-optimization\nMinimize\n obj: 1.0 t\n"
                    "Bounds\n 0.0 <= t <= 5.0\nEnd\n")


def test_pure_milp_is_linear(small):
    m = build_miqp(*small, Objective(1, 2**16), pure_milp=True)
    assert not m.objective_quadratic
    assert "[" not in emit_lp(m)


def test_non_dividing_degrees_omitted(small):
    model, cat, _ = small
    m = build_miqp(model, cat, WorkloadSpec(8, 4), Objective(1, 0))
    assert [n for n in m.variables if n.startswith("y_")] == ["y_1", "y_2"]


def test_sidecar_describes_every_variable(small):
    m = build_miqp(*small, Objective(1, 0))
    side = m.sidecar()
    assert list(side) == list(m.variables)
    assert side["x_1"]["type"] == BINARY and side["x_1"]["kind"] == "cut"
    assert side["z_2_3"]["kind"] == "memory"


def test_variable_cap(small):
    with pytest.raises(BudgetExceededError) as err:
        build_miqp(*small, Objective(1, 0), max_vars=50)
    assert err.value.bound == "variables"


def test_size_grows_with_layers():
    model, cat = fixtures.amoebanet_d36()
    wl = WorkloadSpec(16, 4)
    small_c = build_miqp(merge_layers(model, 4)[0], cat, wl, Objective(1, 0)).counts()
    big_c = build_miqp(merge_layers(model, 8)[0], cat, wl, Objective(1, 0)).counts()
    for key in ("binary", "continuous", "constraints"):
        assert small_c[key] < big_c[key] <= 5 * small_c[key]


# -- assignments -------------------------------------------------------------------

def test_domain_violation_reported(two_layer):
    m = build_miqp(*two_layer, Objective(1, 0))
    a = encode_plan(m, PartitionPlan((0,), 1, (0, 0)))
    a["x_1"] = 0.5
    rep = check_assignment(m, a)
    assert ("domain", "x_1", 0.5) in rep.violations


def test_missing_variable(two_layer):
    m = build_miqp(*two_layer, Objective(1, 0))
    a = encode_plan(m, PartitionPlan((0,), 1, (0, 0)))
    del a["t_iter"]
    with pytest.raises(MissingVariableError):
        check_assignment(m, a)


def test_memory_violation_detected():
    model, cat, wl = fixtures.small_instance()
    plan = PartitionPlan((0, 0, 0, 0, 0), 1, (0,) * 6)
    with pytest.raises(SlpipeError):
        evaluate_plan(model, cat, wl, plan)
    m = build_miqp(model, cat, wl, Objective(1, 0))
    rep = check_assignment(m, encode_plan(m, plan))
    assert any(what == "constraint" and name.startswith("memory_") for what, name, _ in rep.violations)


def test_two_layer_objectives(two_layer):
    for cut, t in ((0, 12.0), (1, 13.0)):
        res = cross_check(*two_layer, Objective(0, 1), PartitionPlan((cut,), 1, (0, 0)))
        assert res["violations"] == []
        assert res["miqp_objective"] == t


def _feasible_case(rng):
    for _ in range(50):
        model, cat, wl = fixtures.random_instance(rng, max_L=5)
        plan = fixtures.random_plan(rng, model, cat, wl)
        try:
            evaluate_plan(model, cat, wl, plan)
        except SlpipeError:
            continue
        return model, cat, wl, plan
    return None


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([(1, 0), (0, 1), (1, 2**16), (1, 2**22)]),
       st.booleans())
def test_feasible_plans_encode_exactly(seed, weights, pure):
    case = _feasible_case(random.Random(seed))
    if case is None:
        return
    model, cat, wl, plan = case
    res = cross_check(model, cat, wl, Objective(*weights), plan, pure_milp=pure)
    assert res["violations"] == []
    assert res["relative_error"] <= 1e-6
    m = res["model"]
    a = encode_plan(m, plan)
    decoded = decode_assignment(m, a)
    assert decoded == plan
    assert evaluate_plan(model, cat, wl, decoded).t_iter <= a["t_iter"] + 1e-6


# -- independent solver --------------------------------------------------------------

def highs_solve(m):
    names = list(m.variables)
    idx = {n: i for i, n in enumerate(names)}
    c = np.zeros(len(names))
    for coef, v in m.objective_linear:
        c[idx[v]] += coef
    A = lil_matrix((len(m.constraints), len(names)))
    lo, hi = [], []
    for r, con in enumerate(m.constraints):
        for coef, v in con.terms:
            A[r, idx[v]] += coef
        lo.append(-np.inf if con.sense == "<=" else con.rhs)
        hi.append(np.inf if con.sense == ">=" else con.rhs)
    integrality = [1 if m.variables[n].kind == BINARY else 0 for n in names]
    bounds = Bounds([m.variables[n].lower for n in names], [m.variables[n].upper for n in names])
    res = milp(c, constraints=LinearConstraint(A.tocsr(), lo, hi), integrality=integrality,
               bounds=bounds, options={"mip_rel_gap": 1e-9})
    return res, dict(zip(names, res.x)) if res.x is not None else None


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from([(1, 0), (0, 1), (1, 1), (1, 2**16)]))
def test_milp_optimum_matches_search(seed, weights):
    rng = random.Random(seed)
    model, cat, wl = fixtures.random_instance(rng, max_L=3, max_J=2, max_K=2)
    obj = Objective(*weights)
    m = build_miqp(model, cat, wl, obj, pure_milp=True)
    res, a = highs_solve(m)
    try:
        want = solve_exact(model, cat, wl, obj)
    except InfeasibleError:
        assert res.status == 2
        return
    assert res.status == 0
    assert math.isclose(res.fun, want.objective_value, rel_tol=1e-6)
    plan = decode_assignment(m, a)
    est = evaluate_plan(model, cat, wl, plan)
    assert math.isclose(obj.value(est.c_iter, est.t_iter), want.objective_value, rel_tol=1e-6)
