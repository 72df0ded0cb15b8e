"""Storage-based scatter-reduce over a simulated object store.

Workers never talk to each other directly: every chunk goes up to the store
and comes back down. Each worker owns one uplink and one downlink channel at
rate ``w``; a request (one or more objects) costs ``t_lat`` plus bytes / ``w``
and holds its channel exclusively. Store-side bandwidth is unlimited.

Two protocols:

* three-phase: upload foreign chunks, download and merge own chunk, then
  exchange merged chunks. Phases are separated by barriers.
* pipelined: ``n`` lockstep steps in which uploads of step ``k`` overlap
  downloads of chunks uploaded in step ``k - 1``, then the same merged
  exchange.

Merging is an elementwise average summed in worker-index order, so results
are bit-reproducible.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

THREE_PHASE = "three-phase"
PIPELINED = "pipelined"
PROTOCOLS = (THREE_PHASE, PIPELINED)


def predicted_times(n: int, s: float, w: float, t_lat: float) -> tuple[float, float]:
    """Closed-form sync time of the three-phase and pipelined protocols."""
    if n < 2:
        raise ValueError(f"scatter-reduce needs at least 2 workers, got {n}")
    three = 3 * s / w - 2 * s / (n * w) + 4 * t_lat
    piped = 2 * s / w + (2 + n) * t_lat
    return three, piped


def chunk_sizes(total: float, n: int) -> list[float]:
    """``n`` equal chunks; the last absorbs any remainder."""
    base = total / n
    sizes = [base] * (n - 1)
    sizes.append(total - base * (n - 1))
    return sizes


def chunk_bounds(length: int, n: int) -> list[tuple[int, int]]:
    base = length // n
    bounds = [(k * base, (k + 1) * base) for k in range(n - 1)]
    bounds.append(((n - 1) * base, length))
    return bounds


@dataclass
class SyncJob:
    n: int
    grad_size: float
    values: list | None = None  # one vector per worker

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one worker")
        if not self.grad_size > 0:
            raise ValueError("gradient size must be positive")
        if self.values is not None:
            if len(self.values) != self.n:
                raise ValueError(f"expected {self.n} value vectors, got {len(self.values)}")
            self.values = [np.asarray(v, dtype=float) for v in self.values]
            if len({v.shape for v in self.values}) != 1:
                raise ValueError("value vectors must have equal length")


@dataclass
class Transfer:
    worker: int
    channel: str  # "up" | "down"
    start: float
    end: float
    action: str
    chunk: int
    nbytes: float


@dataclass
class SyncTrace:
    events: list = field(default_factory=list)  # (time, worker, action, chunk, bytes)
    transfers: list = field(default_factory=list)
    finish_time: float = 0.0
    results: list | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["time_s", "worker", "action", "chunk", "bytes"])
        for t, wk, action, chunk, nbytes in self.events:
            wr.writerow([repr(float(t)), wk, action, chunk, repr(float(nbytes))])
        return buf.getvalue()

    def channel_overlaps(self) -> list[tuple[Transfer, Transfer]]:
        """Pairs of transfers that share a worker channel in time (should be empty)."""
        by_chan = {}
        for tr in self.transfers:
            by_chan.setdefault((tr.worker, tr.channel), []).append(tr)
        bad = []
        for trs in by_chan.values():
            trs.sort(key=lambda t: (t.start, t.end))
            for a, b in zip(trs, trs[1:]):
                if b.start < a.end - 1e-12 * max(1.0, a.end):
                    bad.append((a, b))
        return bad


class StoreSim:
    """Object store plus per-worker duplex channels."""

    def __init__(self, n: int, bandwidth: float, t_lat: float):
        if not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if t_lat < 0:
            raise ValueError("latency must be non-negative")
        self.bandwidth = bandwidth
        self.t_lat = t_lat
        self.objects = {}  # key -> (size, ready_time, payload)
        self.free = {(wk, ch): 0.0 for wk in range(n) for ch in ("up", "down")}
        self.trace = SyncTrace()

    def _occupy(self, worker, channel, earliest, nbytes, action, chunk):
        start = max(earliest, self.free[worker, channel])
        end = start + self.t_lat + nbytes / self.bandwidth
        self.free[worker, channel] = end
        self.trace.transfers.append(Transfer(worker, channel, start, end, action, chunk, nbytes))
        self.trace.events.append((start, worker, action, chunk, nbytes))
        return end

    def upload(self, worker, items, earliest, chunk):
        """Put ``items`` (key -> (size, payload)) in one request; return completion time."""
        nbytes = sum(size for size, _ in items.values())
        end = self._occupy(worker, "up", earliest, nbytes, "upload", chunk)
        for key, (size, payload) in items.items():
            self.objects[key] = (size, end, payload)
        return end

    def download(self, worker, keys, earliest, chunk):
        """Fetch ``keys`` in one request once all are ready; return (end, payloads)."""
        ready = max(self.objects[k][1] for k in keys)
        nbytes = sum(self.objects[k][0] for k in keys)
        end = self._occupy(worker, "down", max(earliest, ready), nbytes, "download", chunk)
        return end, [self.objects[k][2] for k in keys]

    def merge(self, worker, time, chunk):
        self.trace.events.append((time, worker, "merge", chunk, 0.0))


def single_transfer_time(nbytes: float, bandwidth: float, t_lat: float) -> float:
    """Time of one upload through the store channel model."""
    store = StoreSim(1, bandwidth, t_lat)
    return store.upload(0, {"x": (nbytes, None)}, 0.0, 0)


def _average(parts):
    """Elementwise mean; ``parts`` are ordered by worker index."""
    acc = np.zeros_like(parts[0])
    for p in parts:
        acc = acc + p
    return acc / len(parts)


def oracle_average(values) -> np.ndarray:
    """Direct elementwise average, summing workers in index order."""
    length = len(values[0])
    out = np.empty(length)
    for e in range(length):
        acc = 0.0
        for v in values:
            acc += float(v[e])
        out[e] = acc / len(values)
    return out


class _Worker:
    def __init__(self, idx, job):
        self.idx = idx
        if job.values is not None:
            bounds = chunk_bounds(len(job.values[idx]), job.n)
            self.chunks = [job.values[idx][a:b].copy() for a, b in bounds]
        else:
            self.chunks = [None] * job.n
        self.received = {}  # source worker -> chunk payload of own index
        self.merged = None
        self.result_chunks = [None] * job.n

    def merge(self, n):
        if self.chunks[self.idx] is None:
            return
        parts = [self.chunks[self.idx] if src == self.idx else self.received[src]
                 for src in range(n)]
        self.merged = _average(parts)


def _key(kind, src, chunk):
    return f"{kind}/{src}/{chunk}"


def _merged_exchange(job, store, workers, sizes, start_times, barrier):
    """Upload own merged chunk, then download every other merged chunk."""
    n = job.n
    ups = []
    for wk in workers:
        i = wk.idx
        ups.append(store.upload(i, {_key("merged", i, i): (sizes[i], wk.merged)},
                                start_times[i], i))
    ends = []
    for wk in workers:
        i = wk.idx
        keys = [_key("merged", j, j) for j in range(n) if j != i]
        earliest = max(ups) if barrier else ups[i]
        end, payloads = store.download(i, keys, earliest, -1)
        others = iter(payloads)
        for j in range(n):
            wk.result_chunks[j] = wk.merged if j == i else next(others)
        ends.append(end)
    return ends


def _finish(job, store, workers, ends):
    trace = store.trace
    trace.events.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    trace.finish_time = max(ends)
    if job.values is not None:
        trace.results = [np.concatenate(wk.result_chunks) for wk in workers]
    return trace


def run_three_phase(job: SyncJob, store: StoreSim) -> SyncTrace:
    n = job.n
    if n < 2:
        raise ValueError(f"scatter-reduce needs at least 2 workers, got {n}")
    sizes = chunk_sizes(job.grad_size, n)
    workers = [_Worker(i, job) for i in range(n)]

    # phase 1: one request carrying the n-1 chunks other workers merge
    ends = []
    for wk in workers:
        i = wk.idx
        items = {_key("grad", i, c): (sizes[c], wk.chunks[c]) for c in range(n) if c != i}
        ends.append(store.upload(i, items, 0.0, -1))
    barrier = max(ends)

    # phase 2: fetch every copy of the own chunk, merge
    ends = []
    for wk in workers:
        i = wk.idx
        srcs = [j for j in range(n) if j != i]
        end, payloads = store.download(i, [_key("grad", j, i) for j in srcs], barrier, i)
        wk.received = dict(zip(srcs, payloads))
        wk.merge(n)
        store.merge(i, end, i)
        ends.append(end)
    barrier = max(ends)

    # phase 3
    ends = _merged_exchange(job, store, workers, sizes, [barrier] * n, barrier=True)
    return _finish(job, store, workers, ends)


def run_pipelined(job: SyncJob, store: StoreSim, lockstep: bool = True) -> SyncTrace:
    """Pipelined scatter-reduce.

    Step 1 uploads only, steps 2..n-1 upload chunk ``i + k`` while downloading
    the copy of chunk ``i`` uploaded one step earlier by worker ``i - (k - 1)``,
    step ``n`` downloads only. With ``lockstep`` every step starts when all
    workers finished the previous one; otherwise each worker free-runs.
    """
    n = job.n
    if n < 2:
        raise ValueError(f"scatter-reduce needs at least 2 workers, got {n}")
    sizes = chunk_sizes(job.grad_size, n)
    workers = [_Worker(i, job) for i in range(n)]
    step_start = [0.0] * n

    for k in range(1, n + 1):
        step_end = list(step_start)
        for wk in workers:
            i = wk.idx
            if k <= n - 1:
                c = (i + k) % n
                end = store.upload(i, {_key("grad", i, c): (sizes[c], wk.chunks[c])},
                                   step_start[i], c)
                step_end[i] = max(step_end[i], end)
        for wk in workers:
            i = wk.idx
            if k >= 2:
                src = (i - (k - 1)) % n
                end, (payload,) = store.download(i, [_key("grad", src, i)], step_start[i], i)
                wk.received[src] = payload
                step_end[i] = max(step_end[i], end)
        if lockstep:
            step_start = [max(step_end)] * n
        else:
            step_start = step_end

    for wk in workers:
        wk.merge(n)
        store.merge(wk.idx, step_start[wk.idx], wk.idx)
    ends = _merged_exchange(job, store, workers, sizes, step_start, barrier=lockstep)
    return _finish(job, store, workers, ends)


def run(protocol: str, job: SyncJob, bandwidth: float, t_lat: float, **kw) -> SyncTrace:
    store = StoreSim(job.n, bandwidth, t_lat)
    if protocol == THREE_PHASE:
        return run_three_phase(job, store)
    if protocol == PIPELINED:
        return run_pipelined(job, store, **kw)
    raise ValueError(f"unknown protocol {protocol!r}")


def summary(trace: SyncTrace, predicted: float) -> dict:
    rel = abs(trace.finish_time - predicted) / max(abs(predicted), 1e-300)
    return {"finish_time_s": trace.finish_time, "predicted_s": predicted, "relative_error": rel}


def summary_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
