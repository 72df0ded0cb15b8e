"""Deterministic synthetic instances for tests, demos and the CLI battery."""

from __future__ import annotations

import random

from .perf_model import PartitionPlan, partitions_of
from .profiles import LayerProfile, ModelProfile, ResourceCatalog, ResourceOption, WorkloadSpec

# AWS Lambda style memory ladder (MB)
LAMBDA_MEM_MB = (512, 1024, 2048, 3072, 4096, 6144, 8192, 10240)
# $ per GB-second on AWS Lambda, expressed per MB-second
LAMBDA_PRICE_PER_MB_S = 0.0000166667 / 1024
# cost counted in billed MB-seconds; the weight pairs (1, 2^16..2^22) trade off
# against time at this scale
MB_S_PRICE = 1.0


def lambda_bandwidth(mem_mb: float) -> float:
    """Storage bandwidth (MB/s) grows with memory and saturates near 70 MB/s."""
    return min(70.0, 20.0 + mem_mb / 40.0)


def lambda_speed(mem_mb: float) -> float:
    """Relative compute speed; one vCPU per 1769 MB, at most six."""
    vcpu = min(mem_mb / 1769.0, 6.0)
    return vcpu if vcpu <= 1.0 else vcpu ** 0.75


def lambda_catalog(dp=(1, 2, 4, 8, 16), t_lat=0.04, beta=1.1, base_mem=350.0,
                   price=MB_S_PRICE, mem=LAMBDA_MEM_MB) -> ResourceCatalog:
    return ResourceCatalog(
        options=tuple(ResourceOption(float(m), lambda_bandwidth(m)) for m in mem),
        unit_price=price,
        storage_latency=t_lat,
        slowdown=beta,
        base_mem=base_mem,
        dp_options=tuple(dp),
    )


def synthetic_model(param_mb, act_mb, fwd_s, catalog, *, out_mb=None, grad_mb=None,
                    bwd_ratio=2.0) -> ModelProfile:
    """Layers whose compute time at option j is ``fwd_s / speed(M_j)``.

    ``fwd_s`` is the per-layer forward time of one micro-batch on one vCPU.
    """
    out_mb = out_mb if out_mb is not None else act_mb
    grad_mb = grad_mb if grad_mb is not None else out_mb
    speeds = [lambda_speed(o.mem) for o in catalog.options]
    layers = []
    for s, a, o, g, f in zip(param_mb, act_mb, out_mb, grad_mb, fwd_s):
        layers.append(LayerProfile(
            param_size=float(s), act_size=float(a), out_size=float(o), grad_size=float(g),
            fwd_time=tuple(f / v for v in speeds),
            bwd_time=tuple(bwd_ratio * f / v for v in speeds),
        ))
    return ModelProfile(tuple(layers))


def amoebanet_d36(micro_batch=4, catalog=None, n_cells=36) -> tuple[ModelProfile, ResourceCatalog]:
    """AmoebaNet-D36-sized profile: 900 MB of parameters, 697 MB activations per sample.

    Stem, ``n_cells`` normal/reduction cells and a classifier head. Parameters
    concentrate in later cells (channel count doubles at reductions) while
    activations concentrate early.
    """
    catalog = catalog or lambda_catalog()
    L = n_cells + 2
    weights_p = [0.2] + [2.0 ** (3 * c // n_cells) for c in range(n_cells)] + [1.0]
    weights_a = [3.0] + [2.0 ** (-(3 * c // n_cells)) for c in range(n_cells)] + [0.05]
    total_p = sum(weights_p)
    total_a = sum(weights_a)
    param = [900.0 * w / total_p for w in weights_p]
    act = [697.0 * micro_batch * w / total_a for w in weights_a]
    # boundary tensors are a fraction of the stored activations
    out = [0.25 * a for a in act]
    # ~14 s single-vCPU forward for one micro-batch, proportional to activations
    fwd = [14.0 * a / sum(act) for a in act]
    return synthetic_model(param, act, fwd, catalog, out_mb=out), catalog


def small_instance() -> tuple[ModelProfile, ResourceCatalog, WorkloadSpec]:
    """Six-layer model on a four-option catalog; used by CLI examples."""
    catalog = lambda_catalog(dp=(1, 2, 4), mem=(1024, 2048, 4096, 8192), base_mem=200.0)
    model = synthetic_model(
        param_mb=[20, 40, 60, 80, 60, 30],
        act_mb=[300, 250, 200, 150, 100, 20],
        fwd_s=[0.6, 0.5, 0.5, 0.4, 0.3, 0.1],
        catalog=catalog,
        out_mb=[40, 30, 30, 20, 10, 1],
    )
    return model, catalog, WorkloadSpec(32, 4)


def random_instance(rng: random.Random, max_L=6, max_J=4, max_K=3, min_L=1):
    """Random valid instance with loose memory so most plans fit."""
    L = rng.randint(min_L, max_L)
    J = rng.randint(1, max_J)
    K = rng.randint(1, max_K)
    mem = sorted(rng.sample(LAMBDA_MEM_MB, J))
    options = tuple(ResourceOption(float(m), rng.uniform(20.0, 150.0)) for m in mem)
    dp = [1] + sorted(rng.sample([2, 4, 8], K - 1))
    catalog = ResourceCatalog(
        options=options,
        unit_price=rng.choice([1.0, 1e-3, LAMBDA_PRICE_PER_MB_S]),
        storage_latency=rng.choice([0.0, 0.04, rng.uniform(0.0, 0.2)]),
        slowdown=rng.choice([1.0, rng.uniform(1.0, 1.5)]),
        base_mem=rng.uniform(50.0, 300.0),
        dp_options=tuple(dp),
    )
    layers = []
    for _ in range(L):
        base = rng.uniform(0.01, 2.0)
        layers.append(LayerProfile(
            param_size=rng.uniform(0.0, 150.0),
            act_size=rng.uniform(0.0, 200.0),
            out_size=rng.uniform(0.0, 120.0),
            grad_size=rng.uniform(0.0, 120.0),
            fwd_time=tuple(base * rng.uniform(0.3, 1.5) for _ in range(J)),
            bwd_time=tuple(2 * base * rng.uniform(0.3, 1.5) for _ in range(J)),
        ))
    workload = WorkloadSpec(4 * rng.choice([1, 2, 4, 8]), 4)
    return ModelProfile(tuple(layers)), catalog, workload


def random_plan(rng: random.Random, model, catalog, workload) -> PartitionPlan:
    cuts = tuple(rng.randint(0, 1) for _ in range(model.L - 1))
    degrees = [d for d in catalog.dp_options if workload.num_micro % d == 0]
    stage_opts = [rng.randrange(catalog.J) for _ in partitions_of(cuts)]
    return PartitionPlan.from_stages(cuts, rng.choice(degrees), stage_opts)


def two_layer_example() -> tuple[ModelProfile, ResourceCatalog, WorkloadSpec]:
    """Two unit-time layers, mu = 2; 12 s without a cut, 13 s with one."""
    catalog = ResourceCatalog(
        options=(ResourceOption(4096.0, 70.0),), unit_price=1.0, storage_latency=0.0,
        slowdown=1.0, base_mem=100.0, dp_options=(1,),
    )
    layer = LayerProfile(param_size=10.0, act_size=10.0, out_size=70.0, grad_size=70.0,
                         fwd_time=(1.0,), bwd_time=(2.0,))
    return ModelProfile((layer, layer)), catalog, WorkloadSpec(8, 4)


def write_fixture_set(directory, model, catalog, workload):
    """Write model.json, catalog.json and workload.json into ``directory``."""
    from pathlib import Path

    from .profiles import catalog_to_doc, dumps, model_to_doc, workload_to_doc

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "model.json").write_text(dumps(model_to_doc(model)))
    (d / "catalog.json").write_text(dumps(catalog_to_doc(catalog)))
    (d / "workload.json").write_text(dumps(workload_to_doc(workload)))
    return d
