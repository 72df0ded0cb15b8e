"""Linearized mixed-integer formulation of the co-optimization problem.

``build_miqp`` produces a :class:`MIPModel` whose only nonlinearity is the
``t_iter * c_mem`` product in the cost term of the objective (or none, with
``pure_milp``). ``emit_lp`` writes it in CPLEX LP format for an external
solver. ``encode_plan`` turns a :class:`PartitionPlan` into a full variable
assignment, and ``check_assignment`` verifies an assignment against every
constraint, which lets the built-in exact search cross-check the formulation.

Every auxiliary variable carries a definition (how its value follows from
variables created before it), so encoding a plan is a single forward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import BudgetExceededError, SlpipeError
from .perf_model import SYNC_GAMMA, PartitionPlan, evaluate_plan
from .profiles import ModelProfile, ResourceCatalog, WorkloadSpec

BINARY = "binary"
CONTINUOUS = "continuous"
LE, EQ, GE = "<=", "=", ">="

DEFAULT_MAX_VARS = 200_000


class MissingVariableError(SlpipeError, KeyError):
    kind = "missing_variable"


@dataclass
class Var:
    name: str
    kind: str
    lower: float
    upper: float
    meaning: dict
    define: Callable | None = None  # assignment -> value


@dataclass
class Constraint:
    name: str
    terms: list  # [(coef, var name)]
    sense: str
    rhs: float


@dataclass
class MIPModel:
    variables: dict = field(default_factory=dict)  # name -> Var, creation order
    constraints: list = field(default_factory=list)
    objective_linear: list = field(default_factory=list)  # [(coef, var)]
    objective_quadratic: list = field(default_factory=list)  # [(coef, var, var)]
    big_M: dict = field(default_factory=dict)  # max-variable name -> H
    max_vars: int = DEFAULT_MAX_VARS
    _aux: int = 0

    # -- construction ------------------------------------------------------
    def add_var(self, name, kind, lower, upper, meaning=None, define=None):
        if name in self.variables:
            raise ValueError(f"duplicate variable {name}")
        if len(self.variables) >= self.max_vars:
            raise BudgetExceededError("variables", self.max_vars)
        if kind == BINARY:
            lower, upper = 0.0, min(1.0, upper)
        self.variables[name] = Var(name, kind, float(lower), float(upper), meaning or {}, define)
        return name

    def aux(self, kind, lower, upper, meaning, define):
        self._aux += 1
        return self.add_var(f"aux_{self._aux:03d}", kind, lower, upper, meaning, define)

    def add_constraint(self, terms, sense, rhs, name=None):
        terms = [(c, v) for c, v in terms if c != 0]
        for _, v in terms:
            if v not in self.variables:
                raise ValueError(f"constraint references undeclared variable {v}")
        name = name or f"c{len(self.constraints) + 1}"
        self.constraints.append(Constraint(name, list(terms), sense, float(rhs)))

    def define_linear(self, name, terms, const=0.0, meaning=None, upper=math.inf, lower=0.0):
        """Continuous ``name = sum(coef * var) + const``."""
        terms = [(c, v) for c, v in terms if c != 0]

        def define(a, terms=terms, const=const):
            return math.fsum([c * a[v] for c, v in terms]) + const

        self.add_var(name, CONTINUOUS, lower, upper, meaning, define)
        self.add_constraint([(1.0, name)] + [(-c, v) for c, v in terms], EQ, const,
                            name=f"def_{name}")
        return name

    def ub(self, name):
        return self.variables[name].upper

    def counts(self) -> dict:
        n_bin = sum(1 for v in self.variables.values() if v.kind == BINARY)
        return {
            "binary": n_bin,
            "continuous": len(self.variables) - n_bin,
            "constraints": len(self.constraints),
        }

    def sidecar(self) -> dict:
        return {name: dict(v.meaning, type=v.kind) for name, v in self.variables.items()}


# -- linearization techniques ----------------------------------------------------

def _require_binary(m, v):
    if m.variables[v].kind != BINARY:
        raise ValueError(f"{v} is not binary")


def lin_bin_product(m: MIPModel, x: str, y: str) -> str:
    """Binary ``f = x * y``: f <= x, f <= y, f >= x + y - 1."""
    _require_binary(m, x)
    _require_binary(m, y)
    f = m.aux(BINARY, 0, 1, {"kind": "product", "of": [x, y]},
              lambda a: a[x] * a[y])
    m.add_constraint([(1.0, f), (-1.0, x)], LE, 0.0)
    m.add_constraint([(1.0, f), (-1.0, y)], LE, 0.0)
    m.add_constraint([(1.0, f), (-1.0, x), (-1.0, y)], GE, -1.0)
    return f


def lin_cont_bin_product(m: MIPModel, x: str, y: str) -> str:
    """Continuous ``f = x * y`` for binary x and y in [a, b].

    f <= y, f >= y - b(1 - x), a*x <= f <= b*x.
    """
    _require_binary(m, x)
    yv = m.variables[y]
    a, b = yv.lower, yv.upper
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"{y} needs finite bounds, has [{a}, {b}]")
    f = m.aux(CONTINUOUS, min(0.0, a), b, {"kind": "product", "of": [x, y]},
              lambda av: av[x] * av[y])
    m.add_constraint([(1.0, f), (-1.0, y)], LE, 0.0)
    m.add_constraint([(1.0, f), (-1.0, y), (-b, x)], GE, -b)
    if a != 0:
        # with a == 0 this row is the variable's lower bound
        m.add_constraint([(1.0, f), (-a, x)], GE, 0.0)
    m.add_constraint([(1.0, f), (-b, x)], LE, 0.0)
    return f


def lin_max(m: MIPModel, vars: list, H: float | None = None, name=None) -> str:
    """Continuous ``f = max(vars)`` with one selector binary per operand.

    v <= f for all v; v >= f - H(1 - l_v); sum(l_v) >= 1. ``H`` defaults to
    the sum of the operands' upper bounds.
    """
    if not vars:
        raise ValueError("max of an empty list")
    ubs = [m.ub(v) for v in vars]
    if H is None:
        H = math.fsum(ubs)
    lo = max(m.variables[v].lower for v in vars)

    def define(a):
        return max(a[v] for v in vars)

    meaning = {"kind": "max", "of": list(vars)}
    f = m.add_var(name, CONTINUOUS, lo, max(ubs), meaning, define) if name else \
        m.aux(CONTINUOUS, lo, max(ubs), meaning, define)
    m.big_M[f] = H
    selectors = []
    for idx, v in enumerate(vars):
        def pick(a, idx=idx):
            vals = [a[u] for u in vars]
            return 1.0 if vals.index(max(vals)) == idx else 0.0

        l = m.aux(BINARY, 0, 1, {"kind": "max_selector", "max": f, "operand": v}, pick)
        selectors.append(l)
        m.add_constraint([(1.0, v), (-1.0, f)], LE, 0.0)
        m.add_constraint([(1.0, v), (-1.0, f), (-H, l)], GE, -H)
    m.add_constraint([(1.0, l) for l in selectors], GE, 1.0)
    return f


# -- formulation -------------------------------------------------------------------

def _xname(i):
    return f"x_{i + 1}"


def _yname(k):
    return f"y_{k + 1}"


def _zname(i, j):
    return f"z_{i + 1}_{j + 1}"


def build_miqp(model: ModelProfile, catalog: ResourceCatalog, workload: WorkloadSpec,
               objective, pure_milp: bool = False, max_vars: int = DEFAULT_MAX_VARS) -> MIPModel:
    """Linearized formulation; variable names are 1-indexed (``x_1``, ``z_2_3``)."""
    L, J = model.L, catalog.J
    M = workload.num_micro
    Ds = [(k, d) for k, d in enumerate(catalog.dp_options) if M % d == 0]
    beta = catalog.slowdown
    lat = catalog.storage_latency
    W = catalog.bandwidth
    Mem = catalog.mem
    layers = model.layers
    s = [layer.param_size for layer in layers]
    act = [layer.act_size for layer in layers]
    o = [layer.out_size for layer in layers]
    g = [layer.grad_size for layer in layers]
    Tf = [[beta * t for t in layer.fwd_time] for layer in layers]
    Tb = [[beta * t for t in layer.bwd_time] for layer in layers]
    wmin = min(W)
    d_max = max(d for _, d in Ds)
    mu_max = M // min(d for _, d in Ds)

    m = MIPModel(max_vars=max_vars)

    # decision variables; values come from the plan during encoding
    for i in range(L - 1):
        m.add_var(_xname(i), BINARY, 0, 1, {"kind": "cut", "layer": i + 1},
                  lambda a, i=i: float(a["__plan__"].cuts[i]))
    y1 = None
    for k, d in Ds:
        m.add_var(_yname(k), BINARY, 0, 1, {"kind": "dp", "option": k + 1, "degree": d},
                  lambda a, d=d: float(a["__plan__"].dp_degree == d))
        if d == 1:
            y1 = _yname(k)
    for i in range(L):
        for j in range(J):
            m.add_var(_zname(i, j), BINARY, 0, 1,
                      {"kind": "memory", "layer": i + 1, "option": j + 1, "mem_mb": Mem[j]},
                      lambda a, i=i, j=j: float(a["__plan__"].mem_choice[i] == j))

    m.add_constraint([(1.0, _yname(k)) for k, _ in Ds], EQ, 1.0, name="one_dp")
    for i in range(L):
        m.add_constraint([(1.0, _zname(i, j)) for j in range(J)], EQ, 1.0,
                         name=f"one_mem_{i + 1}")
    m_max = max(Mem)
    for i in range(1, L):
        cur = [(Mem[j], _zname(i, j)) for j in range(J)]
        prev = [(-Mem[j], _zname(i - 1, j)) for j in range(J)]
        m.add_constraint(cur + prev + [(-m_max, _xname(i - 1))], LE, 0.0,
                         name=f"consist_up_{i + 1}")
        m.add_constraint([(-c, v) for c, v in cur] + [(-c, v) for c, v in prev]
                         + [(-m_max, _xname(i - 1))], LE, 0.0, name=f"consist_dn_{i + 1}")

    # step 1: same-partition indicators and cumulative quantities
    r = []
    for i in range(L - 1):
        name = f"r_{i + 1}"
        m.add_var(name, BINARY, 0, 1, {"kind": "no_cut", "layer": i + 1},
                  lambda a, i=i: 1.0 - a[_xname(i)])
        m.add_constraint([(1.0, name), (1.0, _xname(i))], EQ, 1.0, name=f"def_{name}")
        r.append(name)
    same = {}  # (a, b) a < b -> binary "layers a..b in one partition"
    for a_ in range(L - 1):
        same[a_, a_ + 1] = r[a_]
        for b_ in range(a_ + 2, L):
            same[a_, b_] = lin_bin_product(m, same[a_, b_ - 1], r[b_ - 1])

    zs_cache = {}

    def z_same(q, j, a_, b_):
        if a_ == b_:
            return _zname(q, j)
        key = (q, j, a_, b_)
        if key not in zs_cache:
            zs_cache[key] = lin_bin_product(m, _zname(q, j), same[a_, b_])
        return zs_cache[key]

    def same_or_one(a_, b_):
        return None if a_ == b_ else same[a_, b_]

    def const_hat(vals, i, forward):
        terms = []
        const = 0.0
        rng = range(0, i + 1) if forward else range(i, L)
        for q in rng:
            ind = same_or_one(q, i) if forward else same_or_one(i, q)
            if ind is None:
                const += vals[q]
            else:
                terms.append((vals[q], ind))
        return terms, const

    hat_tfc, hat_tbc, hat_s, hat_a, hat_sb = [], [], [], [], []
    for i in range(L):
        terms = [(Tf[q][j], z_same(q, j, q, i)) for q in range(i + 1) for j in range(J)]
        hat_tfc.append(m.define_linear(
            f"hat_tfc_{i + 1}", terms, meaning={"kind": "hat_tfc", "layer": i + 1},
            upper=math.fsum(max(Tf[q]) for q in range(i + 1))))
        terms = [(Tb[q][j], z_same(q, j, i, q)) for q in range(i, L) for j in range(J)]
        hat_tbc.append(m.define_linear(
            f"hat_tbc_{i + 1}", terms, meaning={"kind": "hat_tbc", "layer": i + 1},
            upper=math.fsum(max(Tb[q]) for q in range(i, L))))
        terms, const = const_hat(s, i, True)
        hat_s.append(m.define_linear(f"hat_s_{i + 1}", terms, const,
                                     {"kind": "hat_s", "layer": i + 1},
                                     upper=math.fsum(s[:i + 1])))
        terms, const = const_hat(act, i, True)
        hat_a.append(m.define_linear(f"hat_a_{i + 1}", terms, const,
                                     {"kind": "hat_a", "layer": i + 1},
                                     upper=math.fsum(act[:i + 1])))
        terms, const = const_hat(s, i, False)
        hat_sb.append(m.define_linear(f"hat_ssync_{i + 1}", terms, const,
                                      {"kind": "hat_s_sync", "layer": i + 1},
                                      upper=math.fsum(s[i:])))

    # step 2: transfer times at cuts
    xz_cache = {}

    def xz(i, l, j):
        key = (i, l, j)
        if key not in xz_cache:
            xz_cache[key] = lin_bin_product(m, _xname(i), _zname(l, j))
        return xz_cache[key]

    t_fu, t_fd, t_bu, t_bd = {}, {}, {}, {}
    for i in range(L - 1):
        t_fu[i] = m.define_linear(
            f"t_fu_{i + 1}", [(o[i] / W[j], xz(i, i, j)) for j in range(J)] + [(lat, _xname(i))],
            meaning={"kind": "t_fu", "layer": i + 1}, upper=o[i] / wmin + lat)
        t_fd[i] = m.define_linear(
            f"t_fd_{i + 1}", [(o[i] / W[j], xz(i, i + 1, j)) for j in range(J)]
            + [(lat, _xname(i))],
            meaning={"kind": "t_fd", "layer": i + 1}, upper=o[i] / wmin + lat)
    for i in range(1, L):
        t_bu[i] = m.define_linear(
            f"t_bu_{i + 1}", [(g[i] / W[j], xz(i - 1, i, j)) for j in range(J)]
            + [(lat, _xname(i - 1))],
            meaning={"kind": "t_bu", "layer": i + 1}, upper=g[i] / wmin + lat)
        t_bd[i] = m.define_linear(
            f"t_bd_{i + 1}", [(g[i] / W[j], xz(i - 1, i - 1, j)) for j in range(J)]
            + [(lat, _xname(i - 1))],
            meaning={"kind": "t_bd", "layer": i + 1}, upper=g[i] / wmin + lat)

    # step 3: forward and backward times with (mu - 1) * lag expanded over y
    delta_f = lin_max(m, hat_tfc + [t_fu[i] for i in range(L - 1)]
                      + [t_fd[i] for i in range(L - 1)], name="delta_f")
    fc_terms = [(Tf[i][j], _zname(i, j)) for i in range(L) for j in range(J)]
    t_f0 = m.define_linear(
        "t_f0", fc_terms + [(1.0, t_fu[i]) for i in range(L - 1)]
        + [(1.0, t_fd[i]) for i in range(L - 1)],
        meaning={"kind": "t_f0"},
        upper=math.fsum(max(r_) for r_ in Tf)
        + math.fsum(m.ub(t_fu[i]) + m.ub(t_fd[i]) for i in range(L - 1)))
    lag_terms = [(M / d, lin_cont_bin_product(m, _yname(k), delta_f)) for k, d in Ds]
    t_f = m.define_linear("t_f", [(1.0, t_f0)] + lag_terms + [(-1.0, delta_f)],
                          meaning={"kind": "t_f"},
                          upper=m.ub(t_f0) + (mu_max - 1) * m.ub(delta_f))

    t_b = []
    for i in range(L):
        ops = hat_tbc[i:] + [t_bu[k] for k in range(i + 1, L)] + [t_bd[k] for k in range(i + 1, L)]
        delta_b = lin_max(m, ops, name=f"delta_b_{i + 1}")
        terms = [(Tb[q][j], _zname(q, j)) for q in range(i, L) for j in range(J)]
        terms += [(1.0, t_bu[k]) for k in range(i + 1, L)]
        terms += [(1.0, t_bd[k]) for k in range(i + 1, L)]
        base_ub = math.fsum(max(Tb[q]) for q in range(i, L)) + math.fsum(
            m.ub(t_bu[k]) + m.ub(t_bd[k]) for k in range(i + 1, L))
        terms += [(M / d, lin_cont_bin_product(m, _yname(k), delta_b)) for k, d in Ds]
        terms.append((-1.0, delta_b))
        t_b.append(m.define_linear(f"t_b_{i + 1}", terms, meaning={"kind": "t_b", "layer": i + 1},
                                   upper=base_ub + (mu_max - 1) * m.ub(delta_b)))

    # step 4: sync time; (1 - y_1)(2 + d) = 2(1 - y_1) + sum_{D_k > 1} D_k y_k
    t_s = []
    for i in range(L):
        terms = []
        for j in range(J):
            zs = lin_cont_bin_product(m, _zname(i, j), hat_sb[i])
            yzs = lin_cont_bin_product(m, y1, zs)
            terms += [(SYNC_GAMMA / W[j], zs), (-SYNC_GAMMA / W[j], yzs)]
        terms.append((-2.0 * lat, y1))
        terms += [(lat * d, _yname(k)) for k, d in Ds if d != 1]
        t_s.append(m.define_linear(
            f"t_s_{i + 1}", terms, 2.0 * lat, {"kind": "t_s", "layer": i + 1},
            upper=SYNC_GAMMA * m.ub(hat_sb[i]) / wmin + (2 + d_max) * lat))

    # step 5: iteration time
    tail = [m.define_linear(f"t_bs_{i + 1}", [(1.0, t_b[i]), (1.0, t_s[i])],
                            meaning={"kind": "t_b_plus_t_s", "layer": i + 1},
                            upper=m.ub(t_b[i]) + m.ub(t_s[i])) for i in range(L)]
    t_tail = lin_max(m, tail, name="t_tail")
    t_iter = m.define_linear("t_iter", [(1.0, t_f), (1.0, t_tail)], meaning={"kind": "t_iter"},
                             upper=m.ub(t_f) + m.ub(t_tail))

    # step 6: total memory over partitions and replicas
    mem_terms = []
    for i in range(L - 1):
        for j in range(J):
            for k, d in Ds:
                mem_terms.append((d * Mem[j], lin_bin_product(m, xz(i, i, j), _yname(k))))
    for j in range(J):
        for k, d in Ds:
            mem_terms.append((d * Mem[j], lin_bin_product(m, _yname(k), _zname(L - 1, j))))
    c_mem = m.define_linear("c_mem", mem_terms, meaning={"kind": "c_mem"},
                            upper=d_max * L * m_max)

    # step 7: per-worker memory limit
    for i in range(L):
        terms = [(M / d, lin_cont_bin_product(m, _yname(k), hat_a[i])) for k, d in Ds]
        terms += [(4.0, hat_s[i]), (-2.0, lin_cont_bin_product(m, y1, hat_s[i]))]
        terms += [(-Mem[j], _zname(i, j)) for j in range(J)]
        m.add_constraint(terms, LE, -catalog.base_mem, name=f"memory_{i + 1}")

    a1 = objective.alpha_cost * catalog.unit_price
    a2 = objective.alpha_time
    if a2:
        m.objective_linear.append((a2, t_iter))
    if a1:
        if pure_milp:
            for coef, b in mem_terms:
                m.objective_linear.append((a1 * coef, lin_cont_bin_product(m, b, t_iter)))
        else:
            m.objective_quadratic.append((a1, t_iter, c_mem))
    return m


# -- assignments ---------------------------------------------------------------------

def encode_plan(m: MIPModel, plan: PartitionPlan) -> dict:
    """Canonical assignment for ``plan`` (decision variables plus every auxiliary)."""
    a = {"__plan__": plan}
    for name, v in m.variables.items():
        a[name] = float(v.define(a))
    del a["__plan__"]
    return a


def decode_assignment(m: MIPModel, a: dict) -> PartitionPlan:
    cuts, dp, mem = {}, None, {}
    for name, v in m.variables.items():
        kind = v.meaning.get("kind")
        if kind == "cut":
            cuts[v.meaning["layer"]] = int(round(a[name]))
        elif kind == "dp" and round(a[name]) == 1:
            dp = v.meaning["degree"]
        elif kind == "memory" and round(a[name]) == 1:
            mem[v.meaning["layer"]] = v.meaning["option"] - 1
    L = len(mem)
    return PartitionPlan(tuple(cuts[i] for i in range(1, L)), dp,
                         tuple(mem[i] for i in range(1, L + 1)))


@dataclass
class CheckReport:
    violations: list  # (what, name, amount)
    objective: float

    @property
    def feasible(self) -> bool:
        return not self.violations


def objective_value(m: MIPModel, a: dict) -> float:
    lin = [c * a[v] for c, v in m.objective_linear]
    quad = [c * a[u] * a[v] for c, u, v in m.objective_quadratic]
    return math.fsum(lin + quad)


def check_assignment(m: MIPModel, a: dict, tol: float = 1e-9) -> CheckReport:
    """Every violated domain, bound and constraint with its violation amount."""
    missing = [n for n in m.variables if n not in a]
    if missing:
        raise MissingVariableError(f"assignment lacks {len(missing)} variables: {missing[:5]}")
    out = []
    for name, v in m.variables.items():
        val = a[name]
        if v.kind == BINARY and min(abs(val), abs(val - 1.0)) > tol:
            out.append(("domain", name, min(abs(val), abs(val - 1.0))))
        scale = tol * max(1.0, abs(val))
        if val < v.lower - scale:
            out.append(("lower_bound", name, v.lower - val))
        if val > v.upper + scale:
            out.append(("upper_bound", name, val - v.upper))
    for c in m.constraints:
        parts = [coef * a[v] for coef, v in c.terms]
        lhs = math.fsum(parts)
        scale = tol * max(1.0, abs(c.rhs), max((abs(p) for p in parts), default=0.0))
        diff = lhs - c.rhs
        if (c.sense == LE and diff > scale) or (c.sense == GE and -diff > scale) \
                or (c.sense == EQ and abs(diff) > scale):
            out.append(("constraint", c.name, abs(diff)))
    return CheckReport(out, objective_value(m, a))


def cross_check(model, catalog, workload, objective, plan, pure_milp=False, mip=None) -> dict:
    """Encode ``plan``, check it, and compare objectives with the analytic model."""
    mip = mip or build_miqp(model, catalog, workload, objective, pure_milp=pure_milp)
    report = check_assignment(mip, encode_plan(mip, plan))
    est = evaluate_plan(model, catalog, workload, plan)
    analytic = objective.value(est.c_iter, est.t_iter)
    rel = abs(report.objective - analytic) / max(abs(analytic), 1e-300)
    return {"violations": report.violations, "miqp_objective": report.objective,
            "analytic_objective": analytic, "relative_error": rel, "model": mip}


# -- LP text ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _wrap(head, items, width=200):
    lines = []
    cur = head
    for it in items:
        if len(cur) + len(it) + 1 > width:
            lines.append(cur)
            cur = "   "
        cur += " " + it
    lines.append(cur)
    return lines


def _signed(coef, text):
    return f"{'-' if coef < 0 else '+'} {_fmt(abs(coef))} {text}"


def _expr(items):
    """Drop the sign of a leading positive term."""
    if items and items[0].startswith("+ "):
        items = [items[0][2:]] + items[1:]
    return items


def emit_lp(m: MIPModel, sink=None) -> str:
    """CPLEX LP text; identical models give byte-identical output."""
    lines = ["\\ linearized partition/resource co-optimization", "Minimize"]
    items = _expr([_signed(c, v) for c, v in m.objective_linear])
    if m.objective_quadratic:
        quad = _expr([_signed(2 * c, f"{u} * {v}") for c, u, v in m.objective_quadratic])
        items += (["+ ["] if items else ["["]) + quad + ["] / 2"]
    if not items:
        first = next(iter(m.variables), None)
        items = [f"0 {first}"] if first else []
    lines += _wrap(" obj:", items)
    if m.constraints:
        lines.append("Subject To")
        for c in m.constraints:
            body = _expr([_signed(coef, v) for coef, v in c.terms]) or ["0"]
            lines += _wrap(f" {c.name}:", body + [c.sense, _fmt(c.rhs)])
    lines.append("Bounds")
    for v in m.variables.values():
        if v.kind == CONTINUOUS:
            hi = "+inf" if math.isinf(v.upper) else _fmt(v.upper)
            lines.append(f" {_fmt(v.lower)} <= {v.name} <= {hi}")
    binaries = [v.name for v in m.variables.values() if v.kind == BINARY]
    if binaries:
        lines.append("Binaries")
        lines += _wrap("", binaries)
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if sink is not None:
        sink.write(text)
    return text


def sidecar_json(m: MIPModel) -> str:
    return json.dumps(m.sidecar(), indent=2, sort_keys=True) + "\n"
