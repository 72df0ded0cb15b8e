import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slpipe.collective_sim import (
    PIPELINED,
    THREE_PHASE,
    StoreSim,
    SyncJob,
    chunk_bounds,
    chunk_sizes,
    oracle_average,
    predicted_times,
    run,
    run_pipelined,
    run_three_phase,
    summary,
)


def finish(protocol, n, s, w, t_lat, values=None, **kw):
    return run(protocol, SyncJob(n, s, values), w, t_lat, **kw)


def test_reported_numbers():
    assert predicted_times(8, 280, 70, 0) == (11.0, 8.0)
    assert math.isclose(finish(THREE_PHASE, 8, 280, 70, 0).finish_time, 11)
    assert math.isclose(finish(PIPELINED, 8, 280, 70, 0).finish_time, 8)
    assert math.isclose(finish(PIPELINED, 8, 280, 70, 0.04).finish_time, 8.4)


def test_two_workers_three_phase_hand_trace():
    trace = finish(THREE_PHASE, 2, 2, 1, 0)
    assert trace.finish_time == 4
    # upload 1 MB, download 1 MB, upload merged 1 MB, download merged 1 MB
    assert [(tr.start, tr.end) for tr in trace.transfers if tr.worker == 0] == \
        [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_equal_transfer_at_two_workers():
    three, piped = predicted_times(2, 10, 5, 0)
    assert three == piped == 4


def test_latency_can_flip_the_order():
    three, piped = predicted_times(64, 1, 100, 0.5)
    assert piped > three


def test_average_two_workers():
    for proto in (THREE_PHASE, PIPELINED):
        trace = finish(proto, 2, 2, 1, 0, values=[[1.0, 2.0], [3.0, 4.0]])
        for r in trace.results:
            assert r.tolist() == [2.0, 3.0]


def test_three_workers_random_vectors():
    rng = np.random.default_rng(0)
    values = [rng.standard_normal(10) for _ in range(3)]
    want = oracle_average(values)
    trace = finish(PIPELINED, 3, 30, 10, 0.01, values=values)
    assert all(np.array_equal(r, want) for r in trace.results)


def test_single_worker_rejected():
    with pytest.raises(ValueError):
        predicted_times(1, 1, 1, 0)
    for fn in (run_three_phase, run_pipelined):
        with pytest.raises(ValueError):
            fn(SyncJob(1, 1.0), StoreSim(1, 1.0, 0.0))


def test_job_validation():
    with pytest.raises(ValueError):
        SyncJob(2, 0.0)
    with pytest.raises(ValueError):
        SyncJob(2, 1.0, [[1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        SyncJob(3, 1.0, [[1.0], [1.0]])
    with pytest.raises(ValueError):
        run("ring", SyncJob(2, 1.0), 1.0, 0.0)


def test_chunking_last_absorbs_remainder():
    assert chunk_bounds(10, 3) == [(0, 3), (3, 6), (6, 10)]
    sizes = chunk_sizes(10.0, 4)
    assert sizes[:3] == [2.5] * 3 and math.fsum(sizes) == 10.0


@pytest.mark.parametrize("n", range(2, 17))
@pytest.mark.parametrize("s", [1, 10, 280, 1153])
@pytest.mark.parametrize("w", [35, 70, 140])
@pytest.mark.parametrize("t_lat", [0.0, 0.04])
def test_closed_forms(n, s, w, t_lat):
    three, piped = predicted_times(n, s, w, t_lat)
    for proto, want in ((THREE_PHASE, three), (PIPELINED, piped)):
        trace = finish(proto, n, s, w, t_lat)
        assert abs(trace.finish_time - want) <= 1e-9 * want
        assert not trace.channel_overlaps()


@given(st.integers(2, 64))
def test_transfer_ratio(n):
    three, piped = predicted_times(n, 280, 70, 0)
    assert math.isclose(three / piped, (3 - 2 / n) / 2, rel_tol=1e-12)
    assert three / piped <= 1.5
    if n < 64:
        nxt = predicted_times(n + 1, 280, 70, 0)
        assert nxt[0] / nxt[1] > three / piped


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**32 - 1), st.sampled_from([THREE_PHASE, PIPELINED]),
       st.booleans())
def test_reduce_matches_oracle(n, seed, proto, lockstep):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(n, 4 * n + 5))
    values = [rng.standard_normal(length) * 10.0 ** int(rng.integers(-3, 4)) for _ in range(n)]
    kw = {} if proto == THREE_PHASE else {"lockstep": lockstep}
    trace = finish(proto, n, 1.0 * n, 10.0, 0.01, values=values, **kw)
    want = oracle_average(values)
    for r in trace.results:
        assert np.array_equal(r, want)
    assert not trace.channel_overlaps()


def test_free_run_never_slower():
    for n in range(2, 10):
        lock = finish(PIPELINED, n, 280, 70, 0.04).finish_time
        free = finish(PIPELINED, n, 280, 70, 0.04, lockstep=False).finish_time
        assert free <= lock + 1e-12


def test_trace_csv_and_summary():
    trace = finish(PIPELINED, 4, 40, 10, 0.0)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "time_s,worker,action,chunk,bytes"
    actions = {line.split(",")[2] for line in lines[1:]}
    assert actions == {"upload", "download", "merge"}
    times = {}
    for tr in trace.transfers:
        times.setdefault((tr.worker, tr.channel), []).append(tr.start)
    assert all(t == sorted(t) for t in times.values())
    doc = summary(trace, predicted_times(4, 40, 10, 0)[1])
    assert set(doc) == {"finish_time_s", "predicted_s", "relative_error"}
    assert doc["relative_error"] < 1e-12


def test_deterministic_trace():
    a = finish(THREE_PHASE, 5, 50, 10, 0.04).to_csv()
    b = finish(THREE_PHASE, 5, 50, 10, 0.04).to_csv()
    assert a == b
