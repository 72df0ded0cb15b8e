"""Input data model: layer profiles, resource catalog, workload.

Documents are plain JSON. Field names are fixed::

    model.json     [{"param_mb", "act_mb", "out_mb", "grad_mb", "fwd_s": [...], "bwd_s": [...]}, ...]
    catalog.json   {"mem_mb": [...], "bw_mbps": [...], "price_per_mb_s", "t_lat_s",
                    "beta", "base_mem_mb", "dp": [...]}
    workload.json  {"global_batch", "micro_batch"}

Sizes are MB, times seconds, bandwidths MB/s. Arrays are 0-indexed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from numbers import Real
from typing import Sequence

from .errors import SchemaError

CRITERIA = ("compute_time", "param_size", "act_size")


@dataclass(frozen=True)
class ResourceOption:
    mem: float
    bandwidth: float


@dataclass(frozen=True)
class ResourceCatalog:
    options: tuple[ResourceOption, ...]
    unit_price: float
    storage_latency: float
    slowdown: float
    base_mem: float
    dp_options: tuple[int, ...]

    @property
    def J(self) -> int:
        return len(self.options)

    @property
    def K(self) -> int:
        return len(self.dp_options)

    @property
    def mem(self) -> tuple[float, ...]:
        return tuple(o.mem for o in self.options)

    @property
    def bandwidth(self) -> tuple[float, ...]:
        return tuple(o.bandwidth for o in self.options)

    @property
    def max_mem(self) -> float:
        return max(self.mem)


@dataclass(frozen=True)
class LayerProfile:
    param_size: float
    act_size: float
    out_size: float
    grad_size: float
    fwd_time: tuple[float, ...]
    bwd_time: tuple[float, ...]


@dataclass(frozen=True)
class ModelProfile:
    layers: tuple[LayerProfile, ...]

    @property
    def L(self) -> int:
        return len(self.layers)

    def column(self, name: str) -> list:
        return [getattr(layer, name) for layer in self.layers]


@dataclass(frozen=True)
class WorkloadSpec:
    global_batch: int
    micro_batch: int

    @property
    def num_micro(self) -> int:
        return self.global_batch // self.micro_batch


# -- validation helpers -------------------------------------------------------

def _num(doc, key, path, *, positive=False, nonneg=False):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, Real) or not math.isfinite(v):
        raise SchemaError(f"{path}.{key}", f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise SchemaError(f"{path}.{key}", f"must be > 0, got {v}")
    if nonneg and v < 0:
        raise SchemaError(f"{path}.{key}", f"must be >= 0, got {v}")
    return float(v)


def _int(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path}.{key}", f"expected an integer, got {v!r}")
    return v


def _num_list(doc, key, path, *, positive=False, nonneg=False, length=None):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    seq = doc[key]
    if not isinstance(seq, list):
        raise SchemaError(f"{path}.{key}", "expected an array")
    if length is not None and len(seq) != length:
        raise SchemaError(f"{path}.{key}", f"expected {length} entries, got {len(seq)}")
    holder = {str(i): v for i, v in enumerate(seq)}
    return tuple(
        _num(holder, str(i), f"{path}.{key}", positive=positive, nonneg=nonneg)
        for i in range(len(seq))
    )


def _parse(doc, name):
    if isinstance(doc, (str, bytes)):
        try:
            return json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(name, f"invalid JSON: {exc}") from None
    return doc


def parse_catalog(doc) -> ResourceCatalog:
    doc = _parse(doc, "catalog")
    if not isinstance(doc, dict):
        raise SchemaError("catalog", "expected an object")
    mem = _num_list(doc, "mem_mb", "catalog", positive=True)
    if not mem:
        raise SchemaError("catalog.mem_mb", "at least one memory option required")
    bw = _num_list(doc, "bw_mbps", "catalog", positive=True, length=len(mem))
    if any(b <= a for a, b in zip(mem, mem[1:])):
        raise SchemaError("catalog.mem_mb", "memory options must be strictly increasing")
    price = _num(doc, "price_per_mb_s", "catalog", positive=True)
    t_lat = _num(doc, "t_lat_s", "catalog", nonneg=True)
    beta = _num(doc, "beta", "catalog", positive=True)
    if beta < 1:
        raise SchemaError("catalog.beta", f"slowdown must be >= 1, got {beta}")
    base = _num(doc, "base_mem_mb", "catalog", positive=True)
    if "dp" not in doc or not isinstance(doc["dp"], list) or not doc["dp"]:
        raise SchemaError("catalog.dp", "expected a non-empty array")
    dp = []
    for k, v in enumerate(doc["dp"]):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise SchemaError(f"catalog.dp.{k}", f"expected a positive integer, got {v!r}")
        dp.append(v)
    if dp[0] != 1:
        raise SchemaError("catalog.dp.0", "D_1 must be 1")
    if len(set(dp)) != len(dp):
        raise SchemaError("catalog.dp", "duplicate data-parallel degrees")
    return ResourceCatalog(
        options=tuple(ResourceOption(m, w) for m, w in zip(mem, bw)),
        unit_price=price,
        storage_latency=t_lat,
        slowdown=beta,
        base_mem=base,
        dp_options=tuple(dp),
    )


def parse_model(doc, J: int | None = None) -> ModelProfile:
    doc = _parse(doc, "model")
    if not isinstance(doc, list) or not doc:
        raise SchemaError("model", "expected a non-empty array of layers")
    layers = []
    for i, rec in enumerate(doc):
        path = f"model[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(path, "expected an object")
        fwd = _num_list(rec, "fwd_s", path, nonneg=True, length=J)
        bwd = _num_list(rec, "bwd_s", path, nonneg=True, length=len(fwd))
        if not fwd:
            raise SchemaError(f"{path}.fwd_s", "at least one timing required")
        layers.append(LayerProfile(
            param_size=_num(rec, "param_mb", path, nonneg=True),
            act_size=_num(rec, "act_mb", path, nonneg=True),
            out_size=_num(rec, "out_mb", path, nonneg=True),
            grad_size=_num(rec, "grad_mb", path, nonneg=True),
            fwd_time=fwd,
            bwd_time=bwd,
        ))
    J0 = len(layers[0].fwd_time)
    for i, layer in enumerate(layers):
        if len(layer.fwd_time) != J0:
            raise SchemaError(f"model[{i}].fwd_s", "all layers need the same number of timings")
    return ModelProfile(tuple(layers))


def parse_workload(doc) -> WorkloadSpec:
    doc = _parse(doc, "workload")
    gb = _int(doc, "global_batch", "workload")
    mb = _int(doc, "micro_batch", "workload")
    if gb < 1 or mb < 1:
        raise SchemaError("workload", "batch sizes must be positive")
    if gb % mb:
        raise SchemaError("workload.micro_batch", f"{mb} does not divide global_batch {gb}")
    return WorkloadSpec(gb, mb)


def load_inputs(profile_doc, catalog_doc, workload_doc):
    """Parse and validate the three input documents.

    Each argument may be JSON text or an already-decoded object.
    Timing arrays in the model must have one entry per catalog option.
    """
    catalog = parse_catalog(catalog_doc)
    model = parse_model(profile_doc, J=catalog.J)
    workload = parse_workload(workload_doc)
    return model, catalog, workload


def load_files(model_path, catalog_path, workload_path):
    texts = []
    for p in (model_path, catalog_path, workload_path):
        try:
            with open(p) as fh:
                texts.append(fh.read())
        except OSError as exc:
            raise SchemaError(str(p), f"cannot read: {exc.strerror}") from None
    return load_inputs(*texts)


# -- serialization ------------------------------------------------------------

def model_to_doc(model: ModelProfile) -> list:
    return [
        {
            "param_mb": layer.param_size,
            "act_mb": layer.act_size,
            "out_mb": layer.out_size,
            "grad_mb": layer.grad_size,
            "fwd_s": list(layer.fwd_time),
            "bwd_s": list(layer.bwd_time),
        }
        for layer in model.layers
    ]


def catalog_to_doc(catalog: ResourceCatalog) -> dict:
    return {
        "mem_mb": list(catalog.mem),
        "bw_mbps": list(catalog.bandwidth),
        "price_per_mb_s": catalog.unit_price,
        "t_lat_s": catalog.storage_latency,
        "beta": catalog.slowdown,
        "base_mem_mb": catalog.base_mem,
        "dp": list(catalog.dp_options),
    }


def workload_to_doc(workload: WorkloadSpec) -> dict:
    return {"global_batch": workload.global_batch, "micro_batch": workload.micro_batch}


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- layer merging -------------------------------------------------------------

def _criterion_values(model: ModelProfile, criterion: str) -> list[float]:
    if criterion == "compute_time":
        # largest memory option; forward and backward together
        return [layer.fwd_time[-1] + layer.bwd_time[-1] for layer in model.layers]
    if criterion == "param_size":
        return [layer.param_size for layer in model.layers]
    if criterion == "act_size":
        return [layer.act_size for layer in model.layers]
    raise ValueError(f"unknown merge criterion {criterion!r}; expected one of {CRITERIA}")


def balanced_groups(values: Sequence[float], k: int) -> list[tuple[int, int]]:
    """Split ``values`` into ``k`` contiguous groups, minimizing the largest group sum.

    Ties are broken by the lexicographically smallest descending-sorted vector
    of group sums (most balanced), then by earliest boundaries. Returns
    half-open ``(start, stop)`` ranges.
    """
    n = len(values)
    if not 1 <= k <= n:
        raise ValueError(f"cannot split {n} values into {k} groups")

    def gsum(a, b):
        return math.fsum(values[a:b])

    # best[g][i]: (sorted-desc sums, boundaries) for the first i values in g groups
    best = [dict() for _ in range(k + 1)]
    best[0][0] = ((), ())
    for g in range(1, k + 1):
        # the remaining k - g groups need at least one value each
        for i in range(g, n - (k - g) + 1):
            cand = None
            for p in range(g - 1, i):
                if p not in best[g - 1]:
                    continue
                sums, bounds = best[g - 1][p]
                key = tuple(sorted(sums + (gsum(p, i),), reverse=True))
                if cand is None or key < cand[0]:
                    cand = (key, bounds + (p,))
            if cand is not None:
                best[g][i] = cand
    starts = best[k][n][1]
    return [(s, e) for s, e in zip(starts, starts[1:] + (n,))]


def merge_layers(model: ModelProfile, target_L: int, criterion: str = "compute_time"):
    """Merge contiguous layers down to ``target_L`` balanced groups.

    Merged layers sum parameter, activation and compute time, take the output
    size of their last constituent and the gradient size of their first.
    Returns ``(merged_model, merge_map)`` with ``merge_map`` a list of
    inclusive ``(first, last)`` source layer indices.
    """
    if not 1 <= target_L <= model.L:
        raise ValueError(f"target_L must be in [1, {model.L}], got {target_L}")
    groups = balanced_groups(_criterion_values(model, criterion), target_L)
    merged = []
    for a, b in groups:
        part = model.layers[a:b]
        J = len(part[0].fwd_time)
        merged.append(LayerProfile(
            param_size=math.fsum(layer.param_size for layer in part),
            act_size=math.fsum(layer.act_size for layer in part),
            out_size=part[-1].out_size,
            grad_size=part[0].grad_size,
            fwd_time=tuple(math.fsum(layer.fwd_time[j] for layer in part) for j in range(J)),
            bwd_time=tuple(math.fsum(layer.bwd_time[j] for layer in part) for j in range(J)),
        ))
    return ModelProfile(tuple(merged)), [(a, b - 1) for a, b in groups]
