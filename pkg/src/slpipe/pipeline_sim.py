"""Discrete-event simulation of one training iteration of a pipelined plan.

One representative replica chain is simulated; replicas are symmetric, and
gradient sync is a per-stage task with the analytic duration. Each stage owns
three exclusive resources (compute, uplink, downlink). Every resource serves
its tasks in a fixed order: forward micro-batches ``0..mu-1`` first, then
backward in reverse micro-batch order. A task starts once its dependencies
have finished and it is at the head of its resource queue.
"""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field

from .errors import CycleError
from .perf_model import (
    PartitionPlan,
    _comm,
    _compute,
    evaluate_plan,
    sync_time,
    validate_plan,
)

FC, FU, FD, BC, BU, BD, SYNC = "FC", "FU", "FD", "BC", "BU", "BD", "SYNC"
COMM_KINDS = (FU, FD, BU, BD)


@dataclass
class Task:
    id: int
    kind: str
    stage: int
    micro_batch: int  # -1 for SYNC
    duration: float
    deps: set = field(default_factory=set)
    resource: tuple | None = None  # (stage, "compute" | "up" | "down"); None = uncontended


@dataclass
class SimResult:
    makespan: float
    start: dict
    finish: dict
    busy: dict  # resource -> busy seconds
    tasks: list

    def stage_busy(self, stage):
        return {kind: t for (s, kind), t in self.busy.items() if s == stage}

    def stage_idle(self, stage):
        return {kind: self.makespan - t for kind, t in self.stage_busy(stage).items()}

    def gantt_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["stage", "kind", "micro_batch", "start_s", "end_s"])
        for t in sorted(self.tasks, key=lambda t: (self.start[t.id], t.stage, t.id)):
            wr.writerow([t.stage, t.kind, t.micro_batch,
                         repr(self.start[t.id]), repr(self.finish[t.id])])
        return buf.getvalue()


def build_task_graph(model, catalog, workload, plan: PartitionPlan) -> list[Task]:
    """Tasks for one replica under the forward-then-reversed-backward schedule.

    Stage compute durations sum the slowed-down per-layer times of the stage;
    transfer durations are the per-cut terms of the analytic model.
    """
    mu = validate_plan(model, catalog, workload, plan)
    parts = plan.partitions()
    S = len(parts)
    t_fc, t_bc = _compute(model, catalog, plan.mem_choice)
    t_fu, t_fd, t_bu, t_bd = _comm(model, catalog, plan.cuts, plan.mem_choice)
    t_s = sync_time(model, catalog, plan)

    tasks = []
    index = {}

    def add(kind, stage, mb, duration, resource, deps=()):
        t = Task(len(tasks), kind, stage, mb, duration, set(deps), resource)
        tasks.append(t)
        index[kind, stage, mb] = t.id
        return t.id

    for s, (lo, hi) in enumerate(parts):
        fc = sum(t_fc[lo:hi + 1])
        for k in range(mu):
            deps = [index[FD, s - 1, k]] if s > 0 else []
            add(FC, s, k, fc, (s, "compute"), deps)
        if s < S - 1:
            for k in range(mu):
                add(FU, s, k, t_fu[hi], (s, "up"), [index[FC, s, k]])
            for k in range(mu):
                # received by stage s + 1
                add(FD, s, k, t_fd[hi], (s + 1, "down"), [index[FU, s, k]])

    for s in range(S - 1, -1, -1):
        lo, hi = parts[s]
        bc = sum(t_bc[lo:hi + 1])
        for k in range(mu - 1, -1, -1):
            deps = [index[FC, s, k]] if s == S - 1 else [index[BD, s + 1, k]]
            add(BC, s, k, bc, (s, "compute"), deps)
        if s > 0:
            for k in range(mu - 1, -1, -1):
                add(BU, s, k, t_bu[lo], (s, "up"), [index[BC, s, k]])
            for k in range(mu - 1, -1, -1):
                # gradient of stage s received by stage s - 1
                add(BD, s, k, t_bd[lo], (s - 1, "down"), [index[BU, s, k]])
        if plan.dp_degree > 1:
            add(SYNC, s, -1, t_s[lo], None, [index[BC, s, 0]])
    return tasks


def _resource_order(task: Task):
    forward = task.kind in (FC, FU, FD)
    # forward ascending micro-batch, then backward descending
    return (0, task.micro_batch) if forward else (1, -task.micro_batch)


def simulate(tasks: list[Task]) -> SimResult:
    """Event-driven list scheduling of ``tasks``."""
    by_id = {t.id: t for t in tasks}
    queues = {}
    for t in tasks:
        if t.resource is not None:
            queues.setdefault(t.resource, []).append(t)
    for q in queues.values():
        q.sort(key=lambda t: (_resource_order(t), t.id))
    head = {r: 0 for r in queues}
    busy_until = {r: False for r in queues}

    waiting = {t.id: len(t.deps) for t in tasks}
    dependents = {t.id: [] for t in tasks}
    for t in tasks:
        for d in t.deps:
            if d not in by_id:
                raise ValueError(f"task {t.id} depends on unknown task {d}")
            dependents[d].append(t.id)

    start = {}
    finish = {}
    events = []  # (time, seq, task id)
    seq = 0
    now = 0.0

    def try_start():
        nonlocal seq
        for t in tasks:
            if t.resource is None and t.id not in start and waiting[t.id] == 0:
                start[t.id] = now
                heapq.heappush(events, (now + t.duration, seq, t.id))
                seq += 1
        for r, q in queues.items():
            if busy_until[r] or head[r] >= len(q):
                continue
            t = q[head[r]]
            if waiting[t.id] == 0:
                start[t.id] = now
                busy_until[r] = True
                heapq.heappush(events, (now + t.duration, seq, t.id))
                seq += 1

    try_start()
    while events:
        now, _, tid = heapq.heappop(events)
        finish[tid] = now
        t = by_id[tid]
        if t.resource is not None:
            busy_until[t.resource] = False
            head[t.resource] += 1
        for dep in dependents[tid]:
            waiting[dep] -= 1
        # release everything finishing at the same instant before scheduling
        while events and events[0][0] == now:
            _, _, tid2 = heapq.heappop(events)
            finish[tid2] = now
            t2 = by_id[tid2]
            if t2.resource is not None:
                busy_until[t2.resource] = False
                head[t2.resource] += 1
            for dep in dependents[tid2]:
                waiting[dep] -= 1
        try_start()

    if len(finish) != len(tasks):
        stuck = sorted(set(by_id) - set(finish))
        raise CycleError(f"{len(stuck)} tasks never became ready (cycle?): {stuck[:5]}")
    busy = {r: sum(t.duration for t in q) for r, q in queues.items()}
    makespan = max(finish.values(), default=0.0)
    return SimResult(makespan, start, finish, busy, tasks)


def compare_with_model(model, catalog, workload, plan) -> dict:
    """Simulated makespan next to the analytic iteration time."""
    est = evaluate_plan(model, catalog, workload, plan)
    sim = simulate(build_task_graph(model, catalog, workload, plan))
    rel = abs(sim.makespan - est.t_iter) / max(abs(est.t_iter), 1e-300)
    return {
        "simulated_s": sim.makespan,
        "analytic_s": est.t_iter,
        "relative_error": rel,
        "result": sim,
        "estimate": est,
    }
