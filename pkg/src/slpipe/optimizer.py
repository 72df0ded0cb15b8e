"""Exact co-optimization of partition, data-parallel degree and memory.

``solve_exact`` enumerates cut vectors and data-parallel degrees and runs a
branch-and-bound over per-stage memory options. ``brute_force_oracle``
enumerates everything without pruning and exists to check the former.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from dataclasses import dataclass, field

from .errors import BudgetExceededError, InfeasibleError, InfeasibleMemoryError, SlpipeError
from .perf_model import (
    PartitionPlan,
    PerfEstimate,
    backward_terms,
    evaluate_plan,
    forward_terms,
    hat_backward,
    hat_forward,
    partitions_of,
    sync_terms,
)
from .profiles import ModelProfile, ResourceCatalog, WorkloadSpec

log = logging.getLogger(__name__)

BUDGET_ENV = "FUNCPIPE_BUDGET_S"
STANDARD_WEIGHTS = ((1.0, 0.0), (1.0, 2.0**16), (1.0, 2.0**19), (1.0, 2.0**22))

# oracle hard caps
ORACLE_MAX_L = 8
ORACLE_MAX_J = 4
ORACLE_MAX_K = 4


@dataclass(frozen=True)
class Objective:
    alpha_cost: float
    alpha_time: float

    def __post_init__(self):
        if self.alpha_cost < 0 or self.alpha_time < 0:
            raise ValueError("objective weights must be non-negative")
        if self.alpha_cost == 0 and self.alpha_time == 0:
            raise ValueError("objective weights cannot both be zero")

    def value(self, c_iter: float, t_iter: float) -> float:
        return self.alpha_cost * c_iter + self.alpha_time * t_iter


@dataclass
class Solution:
    plan: PartitionPlan
    estimate: PerfEstimate
    objective_value: float
    stats: dict = field(default_factory=dict)

    def key(self):
        e = self.estimate
        p = self.plan
        return (self.objective_value, e.c_iter, e.t_iter, p.cuts, p.dp_degree, p.mem_choice)


@dataclass
class SearchOptions:
    """Hard caps for ``solve_exact``; tripping any raises BudgetExceededError."""

    max_layers: int = 16
    max_candidates: int = 20_000_000
    max_seconds: float | None = None

    @classmethod
    def from_env(cls, **kw) -> "SearchOptions":
        opts = cls(**kw)
        if opts.max_seconds is None and os.environ.get(BUDGET_ENV):
            opts.max_seconds = float(os.environ[BUDGET_ENV])
        return opts


def usable_dp_degrees(catalog: ResourceCatalog, workload: WorkloadSpec) -> list[int]:
    M = workload.num_micro
    out = []
    for d in catalog.dp_options:
        if M % d:
            log.warning("skipping dp degree %d: does not divide %d micro-batches", d, M)
        else:
            out.append(d)
    return out


class _Budget:
    def __init__(self, options: SearchOptions):
        self.options = options
        self.count = 0
        self.start = time.monotonic()

    def tick(self, n=1):
        self.count += n
        if self.count > self.options.max_candidates:
            raise BudgetExceededError("candidates", self.options.max_candidates)
        if self.options.max_seconds is not None and self.count % 512 == 0:
            elapsed = time.monotonic() - self.start
            if elapsed > self.options.max_seconds:
                raise BudgetExceededError("wall_clock_s", self.options.max_seconds)


def _partition_requirements(model, catalog, cuts, d, mu):
    """Memory needed by each partition (checked at its highest layer)."""
    a_hat = hat_forward(model.column("act_size"), cuts)
    s_hat = hat_forward(model.column("param_size"), cuts)
    factor = 2.0 if d == 1 else 4.0
    return [mu * a_hat[hi] + s_hat[hi] * factor + catalog.base_mem
            for _, hi in partitions_of(cuts)]


class _Bounder:
    """Objective lower bound for a partial per-stage memory assignment.

    Unassigned stages take, per layer, the fastest compute time and the
    highest bandwidth among their feasible options, and the smallest feasible
    memory for cost. Every time/cost term is monotone in those inputs, so the
    result never exceeds the objective of any completion.
    """

    def __init__(self, model, catalog, objective, cuts, d, mu, feasible):
        self.cuts = cuts
        self.d = d
        self.mu = mu
        self.objective = objective
        self.catalog = catalog
        self.parts = partitions_of(cuts)
        beta = catalog.slowdown
        self.lat = catalog.storage_latency
        layers = model.layers
        self.out = [layer.out_size for layer in layers]
        self.grad = [layer.grad_size for layer in layers]
        self.s_sync = hat_backward([layer.param_size for layer in layers], cuts)
        W = catalog.bandwidth
        Mm = catalog.mem
        self.fc = {}
        self.bc = {}
        self.w = {}
        self.mem = {}
        # per stage: exact terms per option plus the optimistic "free" entry
        for p, (lo, hi) in enumerate(self.parts):
            opts = feasible[p]
            for j in opts:
                self.fc[p, j] = [beta * layers[i].fwd_time[j] for i in range(lo, hi + 1)]
                self.bc[p, j] = [beta * layers[i].bwd_time[j] for i in range(lo, hi + 1)]
                self.w[p, j] = W[j]
                self.mem[p, j] = Mm[j]
            self.fc[p, None] = [min(beta * layers[i].fwd_time[j] for j in opts)
                                for i in range(lo, hi + 1)]
            self.bc[p, None] = [min(beta * layers[i].bwd_time[j] for j in opts)
                                for i in range(lo, hi + 1)]
            self.w[p, None] = max(W[j] for j in opts)
            self.mem[p, None] = Mm[opts[0]]

    def bound(self, assign):
        """``assign[p]`` is an option index or None for unassigned stages."""
        t_fc = []
        t_bc = []
        w = []
        c_mem = 0.0
        for p, (lo, hi) in enumerate(self.parts):
            j = assign[p]
            t_fc.extend(self.fc[p, j])
            t_bc.extend(self.bc[p, j])
            w.extend([self.w[p, j]] * (hi - lo + 1))
            c_mem += self.mem[p, j]
        c_mem *= self.d
        L = len(t_fc)
        lat = self.lat
        t_fu = [0.0] * L
        t_fd = [0.0] * L
        t_bu = [0.0] * L
        t_bd = [0.0] * L
        for i in range(L - 1):
            if self.cuts[i]:
                t_fu[i] = self.out[i] / w[i] + lat
                t_fd[i] = self.out[i] / w[i + 1] + lat
                t_bu[i + 1] = self.grad[i + 1] / w[i + 1] + lat
                t_bd[i + 1] = self.grad[i + 1] / w[i] + lat
        t_f = forward_terms(t_fc, t_fu, t_fd, self.cuts, self.mu)[0]
        t_b = backward_terms(t_bc, t_bu, t_bd, self.cuts, self.mu)[0]
        t_s = sync_terms(self.s_sync, w, self.d, lat)
        t_iter = t_f + max(b + s for b, s in zip(t_b, t_s))
        c_iter = self.catalog.unit_price * t_iter * c_mem
        return self.objective.value(c_iter, t_iter)


def _cut_vectors(L):
    return itertools.product((0, 1), repeat=L - 1)


def _make_solution(model, catalog, workload, objective, plan):
    est = evaluate_plan(model, catalog, workload, plan)
    return Solution(plan, est, objective.value(est.c_iter, est.t_iter))


# slack so float noise in the bound never prunes an optimal or tied leaf
_BOUND_SLACK = 1e-9


def solve_exact(model: ModelProfile, catalog: ResourceCatalog, workload: WorkloadSpec,
                objective: Objective, options: SearchOptions | None = None) -> Solution:
    """Minimize ``alpha_cost * c_iter + alpha_time * t_iter`` exactly.

    Ties go to lower cost, then lower time, then the lexicographically
    smaller cut vector, dp degree and memory vector.
    """
    options = options or SearchOptions.from_env()
    if model.L > options.max_layers:
        raise BudgetExceededError("layers", options.max_layers)
    budget = _Budget(options)
    M = workload.num_micro
    degrees = usable_dp_degrees(catalog, workload)
    best: Solution | None = None
    leaves = 0

    def better(sol):
        return best is None or sol.key() < best.key()

    def pruned(lb):
        return best is not None and lb * (1 - _BOUND_SLACK) > best.objective_value

    for cuts in _cut_vectors(model.L):
        for d in degrees:
            mu = M // d
            req = _partition_requirements(model, catalog, cuts, d, mu)
            feasible = [[j for j, o in enumerate(catalog.options) if o.mem >= r] for r in req]
            if any(not f for f in feasible):
                continue
            bounder = _Bounder(model, catalog, objective, cuts, d, mu, feasible)
            P = len(feasible)
            budget.tick()
            if pruned(bounder.bound([None] * P)):
                continue

            stack = [[]]
            while stack:
                prefix = stack.pop()
                depth = len(prefix)
                if depth == P:
                    budget.tick()
                    leaves += 1
                    plan = PartitionPlan.from_stages(cuts, d, prefix)
                    sol = _make_solution(model, catalog, workload, objective, plan)
                    if better(sol):
                        best = sol
                    continue
                children = []
                rest = [None] * (P - depth - 1)
                for j in feasible[depth]:
                    budget.tick()
                    lb = bounder.bound(prefix + [j] + rest)
                    if not pruned(lb):
                        children.append((lb, j))
                # most promising child ends up on top of the stack
                children.sort(reverse=True)
                for _, j in children:
                    stack.append(prefix + [j])

    if best is None:
        raise InfeasibleError("no plan satisfies the memory constraints")
    best.stats = {"candidates": leaves, "nodes": budget.count}
    return best


def brute_force_oracle(model: ModelProfile, catalog: ResourceCatalog,
                       workload: WorkloadSpec, objective: Objective) -> Solution:
    """Evaluate every (cuts, d, per-stage memory) combination without pruning."""
    if model.L > ORACLE_MAX_L or catalog.J > ORACLE_MAX_J or catalog.K > ORACLE_MAX_K:
        raise BudgetExceededError(
            "oracle_cap", f"L<={ORACLE_MAX_L}, J<={ORACLE_MAX_J}, K<={ORACLE_MAX_K}"
        )
    best = None
    count = 0
    for cuts in _cut_vectors(model.L):
        P = sum(cuts) + 1
        for d in catalog.dp_options:
            if workload.num_micro % d:
                continue
            for stage_opts in itertools.product(range(catalog.J), repeat=P):
                count += 1
                plan = PartitionPlan.from_stages(cuts, d, stage_opts)
                try:
                    sol = _make_solution(model, catalog, workload, objective, plan)
                except InfeasibleMemoryError:
                    continue
                if best is None or sol.key() < best.key():
                    best = sol
    if best is None:
        raise InfeasibleError("no plan satisfies the memory constraints")
    best.stats = {"candidates": count}
    return best


# -- Pareto sweep and recommendation --------------------------------------------

@dataclass
class ParetoFront:
    points: list  # (Solution, Objective), sorted by t_iter ascending
    failures: list = field(default_factory=list)  # (Objective, SlpipeError)

    def __len__(self):
        return len(self.points)


def _dominates(a: PerfEstimate, b: PerfEstimate) -> bool:
    return (a.t_iter <= b.t_iter and a.c_iter <= b.c_iter
            and (a.t_iter < b.t_iter or a.c_iter < b.c_iter))


def pareto_sweep(model, catalog, workload, weights, options: SearchOptions | None = None,
                 solver=solve_exact) -> ParetoFront:
    """Solve every weight pair, drop duplicate and dominated plans, sort by time."""
    weights = list(weights)
    if not weights:
        raise ValueError("need at least one weight pair")
    solved = []
    failures = []
    for w in weights:
        if not isinstance(w, Objective):
            w = Objective(*w)
        try:
            sol = solver(model, catalog, workload, w, options) if options else \
                solver(model, catalog, workload, w)
        except SlpipeError as exc:
            log.warning("weights %s failed: %s", w, exc)
            failures.append((w, exc))
            continue
        solved.append((sol, w))

    unique = []
    seen = set()
    for sol, w in solved:
        if sol.plan in seen:
            continue
        seen.add(sol.plan)
        unique.append((sol, w))
    kept = []
    for sol, w in unique:
        if any(_dominates(o.estimate, sol.estimate) for o, _ in unique):
            continue
        # identical (t, c) from different plans: keep the first
        if any(o.estimate.t_iter == sol.estimate.t_iter
               and o.estimate.c_iter == sol.estimate.c_iter for o, _ in kept):
            continue
        kept.append((sol, w))
    kept.sort(key=lambda p: (p[0].estimate.t_iter, p[0].estimate.c_iter))
    return ParetoFront(kept, failures)


def recommendation_ratio(t_cost, c_cost, t_p, c_p) -> float:
    """Relative speedup over the cheapest point per unit of relative cost increase."""
    if c_p <= c_cost:
        return math.inf
    if c_cost <= 0:
        return 0.0
    return (t_cost / t_p - 1.0) / (c_p / c_cost - 1.0)


def recommend(front: ParetoFront, threshold: float = 0.8) -> Solution:
    """Fastest point whose recommendation ratio reaches ``threshold``.

    The cheapest point is always eligible, so it is returned when nothing
    faster qualifies.
    """
    if not front.points:
        raise ValueError("cannot recommend from an empty front")
    sols = [s for s, _ in front.points]
    cheapest = min(sols, key=lambda s: (s.estimate.c_iter, s.estimate.t_iter))
    t_cost, c_cost = cheapest.estimate.t_iter, cheapest.estimate.c_iter
    for s in sorted(sols, key=lambda s: (s.estimate.t_iter, s.estimate.c_iter)):
        if s is cheapest:
            return s
        if recommendation_ratio(t_cost, c_cost, s.estimate.t_iter, s.estimate.c_iter) >= threshold:
            return s
    return cheapest
