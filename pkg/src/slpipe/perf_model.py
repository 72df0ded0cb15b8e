"""Closed-form iteration time and cost of a pipelined, data-parallel plan.

A plan cuts the layer sequence into contiguous partitions (stages), gives every
stage ``d`` replica workers and one memory option. Each replica streams
``mu = M / d`` micro-batches forward through all stages, then backward in
reverse order, then synchronizes gradients with its peers by pipelined
scatter-reduce.

Per-layer arrays are 0-indexed. Communication terms at positions with no cut
are zero; ``t_fu``/``t_fd`` are zero-padded at the last layer and
``t_bu``/``t_bd`` at the first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import InfeasibleMemoryError, InvalidPlanError
from .profiles import ModelProfile, ResourceCatalog, WorkloadSpec

SYNC_GAMMA = 2.0


def sync_latency_factor(d: int) -> float:
    """Storage round trips per scatter-reduce with ``d`` workers (``2 + d``)."""
    return 2.0 + d


@dataclass(frozen=True)
class PartitionPlan:
    cuts: tuple[int, ...]
    dp_degree: int
    mem_choice: tuple[int, ...]

    @property
    def L(self) -> int:
        return len(self.mem_choice)

    def partitions(self) -> list[tuple[int, int]]:
        """Inclusive ``(lowest, highest)`` layer index of each stage."""
        return partitions_of(self.cuts)

    def stage_options(self) -> list[int]:
        return [self.mem_choice[lo] for lo, _ in self.partitions()]

    def to_doc(self, catalog: ResourceCatalog | None = None) -> dict:
        doc = {
            "cuts": list(self.cuts),
            "dp_degree": self.dp_degree,
            "mem_choice": list(self.mem_choice),
        }
        if catalog is not None:
            doc["mem_mb"] = [catalog.options[j].mem for j in self.mem_choice]
        return doc

    @classmethod
    def from_doc(cls, doc) -> "PartitionPlan":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        try:
            return cls(
                cuts=tuple(int(x) for x in doc["cuts"]),
                dp_degree=int(doc["dp_degree"]),
                mem_choice=tuple(int(j) for j in doc["mem_choice"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPlanError(f"malformed plan document: {exc}") from None

    @classmethod
    def from_stages(cls, cuts, dp_degree, stage_options) -> "PartitionPlan":
        """Expand one memory option per stage into the per-layer vector."""
        cuts = tuple(cuts)
        mem = []
        for (lo, hi), j in zip(partitions_of(cuts), stage_options, strict=True):
            mem.extend([j] * (hi - lo + 1))
        return cls(cuts, dp_degree, tuple(mem))


def partitions_of(cuts: Sequence[int]) -> list[tuple[int, int]]:
    parts = []
    lo = 0
    for i, x in enumerate(cuts):
        if x:
            parts.append((lo, i))
            lo = i + 1
    parts.append((lo, len(cuts)))
    return parts


@dataclass(frozen=True)
class PerfEstimate:
    t_f: float
    t_f0: float
    delta_f: float
    t_b: tuple[float, ...]
    delta_b: tuple[float, ...]
    t_s: tuple[float, ...]
    t_iter: float
    c_mem: float
    c_iter: float
    t_fc: tuple[float, ...]
    t_bc: tuple[float, ...]
    t_fu: tuple[float, ...]
    t_fd: tuple[float, ...]
    t_bu: tuple[float, ...]
    t_bd: tuple[float, ...]
    a_hat: tuple[float, ...]
    s_hat: tuple[float, ...]
    s_hat_sync: tuple[float, ...]
    tfc_hat: tuple[float, ...]
    tbc_hat: tuple[float, ...]
    mem_required: tuple[float, ...]
    mu: int

    def to_doc(self) -> dict:
        doc = asdict(self)
        doc["c_mem_mb"] = doc.pop("c_mem")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


# -- hat operators --------------------------------------------------------------

def _check_lengths(values, cuts):
    if len(values) == 0 or len(cuts) != len(values) - 1:
        raise ValueError(
            f"need len(cuts) == len(values) - 1, got {len(cuts)} and {len(values)}"
        )


def hat_forward(values: Sequence[float], cuts: Sequence[int]) -> list[float]:
    """Running sum from the bottom of each partition upward."""
    _check_lengths(values, cuts)
    out = [values[0]]
    for i in range(1, len(values)):
        out.append(values[i] + (0.0 if cuts[i - 1] else out[-1]))
    return out


def hat_backward(values: Sequence[float], cuts: Sequence[int]) -> list[float]:
    """Running sum from the top of each partition downward."""
    _check_lengths(values, cuts)
    out = [0.0] * len(values)
    out[-1] = values[-1]
    for i in range(len(values) - 2, -1, -1):
        out[i] = values[i] + (0.0 if cuts[i] else out[i + 1])
    return out


# -- plan checks ------------------------------------------------------------------

def validate_plan(model: ModelProfile, catalog: ResourceCatalog,
                  workload: WorkloadSpec, plan: PartitionPlan) -> int:
    """Raise InvalidPlanError unless ``plan`` is well formed; return mu."""
    L = model.L
    if len(plan.cuts) != L - 1:
        raise InvalidPlanError(f"expected {L - 1} cut flags, got {len(plan.cuts)}")
    if any(x not in (0, 1) for x in plan.cuts):
        raise InvalidPlanError("cut flags must be 0 or 1")
    if len(plan.mem_choice) != L:
        raise InvalidPlanError(f"expected {L} memory choices, got {len(plan.mem_choice)}")
    if any(not 0 <= j < catalog.J for j in plan.mem_choice):
        raise InvalidPlanError(f"memory choice out of range [0, {catalog.J})")
    for i in range(1, L):
        if not plan.cuts[i - 1] and plan.mem_choice[i] != plan.mem_choice[i - 1]:
            raise InvalidPlanError(
                f"layers {i - 1} and {i} share a partition but use different memory"
            )
    d = plan.dp_degree
    if d not in catalog.dp_options:
        raise InvalidPlanError(f"dp degree {d} not among {list(catalog.dp_options)}")
    M = workload.num_micro
    if M % d:
        raise InvalidPlanError(f"dp degree {d} does not divide {M} micro-batches")
    return M // d


def memory_required(model: ModelProfile, plan: PartitionPlan, layer_index: int,
                    workload: WorkloadSpec | None = None, base_mem: float = 0.0,
                    mu: int | None = None) -> float:
    """Per-worker memory (MB) needed at ``layer_index``.

    Activations of ``mu`` micro-batches plus parameters and gradients, plus
    two serialized copies of the parameters when the stage is replicated,
    plus the base footprint. Meaningful as a partition requirement at each
    partition's highest layer.
    """
    if mu is None:
        if workload is None:
            raise ValueError("pass either workload or mu")
        mu = workload.num_micro // plan.dp_degree
    a_hat = hat_forward(model.column("act_size"), plan.cuts)
    s_hat = hat_forward(model.column("param_size"), plan.cuts)
    factor = 2.0 if plan.dp_degree == 1 else 4.0
    return mu * a_hat[layer_index] + s_hat[layer_index] * factor + base_mem


# -- per-layer terms --------------------------------------------------------------

def comm_terms(model: ModelProfile, catalog: ResourceCatalog, plan: PartitionPlan):
    """Upload/download times at each cut: ``(t_fu, t_fd, t_bu, t_bd)``."""
    return _comm(model, catalog, plan.cuts, plan.mem_choice)


def _comm(model, catalog, cuts, mem_choice):
    L = model.L
    lat = catalog.storage_latency
    w = [catalog.options[j].bandwidth for j in mem_choice]
    t_fu = [0.0] * L
    t_fd = [0.0] * L
    t_bu = [0.0] * L
    t_bd = [0.0] * L
    for i in range(L - 1):
        if cuts[i]:
            o = model.layers[i].out_size
            t_fu[i] = o / w[i] + lat
            t_fd[i] = o / w[i + 1] + lat
            g = model.layers[i + 1].grad_size
            t_bu[i + 1] = g / w[i + 1] + lat
            t_bd[i + 1] = g / w[i] + lat
    return t_fu, t_fd, t_bu, t_bd


def _compute(model, catalog, mem_choice):
    beta = catalog.slowdown
    t_fc = [beta * layer.fwd_time[j] for layer, j in zip(model.layers, mem_choice)]
    t_bc = [beta * layer.bwd_time[j] for layer, j in zip(model.layers, mem_choice)]
    return t_fc, t_bc


def forward_terms(t_fc, t_fu, t_fd, cuts, mu):
    """``(t_f, t_f0, delta_f, tfc_hat)`` from per-layer forward terms."""
    tfc_hat = hat_forward(t_fc, cuts)
    t_f0 = sum(t_fc) + sum(t_fu) + sum(t_fd)
    delta_f = max(max(tfc_hat), max(t_fu), max(t_fd))
    return t_f0 + (mu - 1) * delta_f, t_f0, delta_f, tfc_hat


def backward_terms(t_bc, t_bu, t_bd, cuts, mu):
    """``(t_b, delta_b, tbc_hat)``; ``t_b[i]`` is measured from the end of forward."""
    L = len(t_bc)
    tbc_hat = hat_backward(t_bc, cuts)
    t_b = [0.0] * L
    delta_b = [0.0] * L
    acc = 0.0
    lag = 0.0
    for i in range(L - 1, -1, -1):
        acc += t_bc[i]
        lag = max(lag, tbc_hat[i])
        if i + 1 < L:
            acc += t_bu[i + 1] + t_bd[i + 1]
            lag = max(lag, t_bu[i + 1], t_bd[i + 1])
        delta_b[i] = lag
        t_b[i] = acc + (mu - 1) * lag
    return t_b, delta_b, tbc_hat


def sync_terms(s_hat_sync, bandwidth, d, t_lat):
    if d == 1:
        return [0.0] * len(s_hat_sync)
    lat = sync_latency_factor(d) * t_lat
    return [SYNC_GAMMA * s / w + lat for s, w in zip(s_hat_sync, bandwidth)]


def forward_time(model, catalog, plan, workload):
    """``(t_f, t_f0, delta_f)`` for ``plan``."""
    mu = validate_plan(model, catalog, workload, plan)
    t_fc, _ = _compute(model, catalog, plan.mem_choice)
    t_fu, t_fd, _, _ = _comm(model, catalog, plan.cuts, plan.mem_choice)
    t_f, t_f0, delta_f, _ = forward_terms(t_fc, t_fu, t_fd, plan.cuts, mu)
    return t_f, t_f0, delta_f


def backward_time(model, catalog, plan, workload) -> list[float]:
    mu = validate_plan(model, catalog, workload, plan)
    _, t_bc = _compute(model, catalog, plan.mem_choice)
    _, _, t_bu, t_bd = _comm(model, catalog, plan.cuts, plan.mem_choice)
    return backward_terms(t_bc, t_bu, t_bd, plan.cuts, mu)[0]


def sync_time(model, catalog, plan) -> list[float]:
    """Per-layer gradient synchronization time.

    Uses the parameter size summed from layer ``i`` to the top of its
    partition, so at a partition's lowest layer it covers the whole stage.
    """
    s_sync = hat_backward(model.column("param_size"), plan.cuts)
    w = [catalog.options[j].bandwidth for j in plan.mem_choice]
    return sync_terms(s_sync, w, plan.dp_degree, catalog.storage_latency)


def check_memory(model, catalog, plan, mu):
    """Raise InfeasibleMemoryError for the first partition that does not fit."""
    a_hat = hat_forward(model.column("act_size"), plan.cuts)
    s_hat = hat_forward(model.column("param_size"), plan.cuts)
    factor = 2.0 if plan.dp_degree == 1 else 4.0
    req = [mu * a + s * factor + catalog.base_mem for a, s in zip(a_hat, s_hat)]
    for p, (_, hi) in enumerate(plan.partitions()):
        avail = catalog.options[plan.mem_choice[hi]].mem
        if req[hi] > avail:
            raise InfeasibleMemoryError(p, req[hi], avail)
    return a_hat, s_hat, req


def evaluate_plan(model: ModelProfile, catalog: ResourceCatalog,
                  workload: WorkloadSpec, plan: PartitionPlan) -> PerfEstimate:
    """Full time/cost breakdown of ``plan``; raises if any partition overflows memory."""
    mu = validate_plan(model, catalog, workload, plan)
    a_hat, s_hat, req = check_memory(model, catalog, plan, mu)
    cuts = plan.cuts
    t_fc, t_bc = _compute(model, catalog, plan.mem_choice)
    t_fu, t_fd, t_bu, t_bd = _comm(model, catalog, cuts, plan.mem_choice)
    t_f, t_f0, delta_f, tfc_hat = forward_terms(t_fc, t_fu, t_fd, cuts, mu)
    t_b, delta_b, tbc_hat = backward_terms(t_bc, t_bu, t_bd, cuts, mu)
    s_sync = hat_backward(model.column("param_size"), cuts)
    w = [catalog.options[j].bandwidth for j in plan.mem_choice]
    t_s = sync_terms(s_sync, w, plan.dp_degree, catalog.storage_latency)
    t_iter = t_f + max(b + s for b, s in zip(t_b, t_s))
    c_mem = plan.dp_degree * sum(catalog.options[j].mem for j in plan.stage_options())
    c_iter = catalog.unit_price * t_iter * c_mem
    return PerfEstimate(
        t_f=t_f, t_f0=t_f0, delta_f=delta_f,
        t_b=tuple(t_b), delta_b=tuple(delta_b), t_s=tuple(t_s),
        t_iter=t_iter, c_mem=c_mem, c_iter=c_iter,
        t_fc=tuple(t_fc), t_bc=tuple(t_bc),
        t_fu=tuple(t_fu), t_fd=tuple(t_fd), t_bu=tuple(t_bu), t_bd=tuple(t_bd),
        a_hat=tuple(a_hat), s_hat=tuple(s_hat), s_hat_sync=tuple(s_sync),
        tfc_hat=tuple(tfc_hat), tbc_hat=tuple(tbc_hat),
        mem_required=tuple(req), mu=mu,
    )
