import itertools
import math

import numpy as np
import pytest

from tsdcfl import coding, learning
from tsdcfl import simulator as simmod
from tsdcfl.config import ExperimentConfig
from tsdcfl.reporting import report_to_json
from tsdcfl.simulator import (
    Simulation, StragglerHistory, choose_coding_params, expected_arrival_data,
    predict_stragglers, run_experiment, sample_world,
)

SPEEDS = np.array([2, 2, 4, 4, 8, 8], dtype=float)


def small_cfg(**kw):
    cfg = ExperimentConfig(**kw)
    cfg.outputs.trace = False
    return cfg


def spans_ones(B, rows):
    # independent check: is the all-ones vector in the row space of B[rows]?
    if not rows:
        return False
    S = B[list(rows)]
    return np.linalg.matrix_rank(np.vstack([S, np.ones(B.shape[1])])) == np.linalg.matrix_rank(S)


def enumerate_expectation(B, prob, full):
    total = 0.0
    for pat in itertools.product((0, 1), repeat=len(prob)):
        w = np.prod([p if st else 1 - p for st, p in zip(pat, prob)])
        alive = [m for m, st in enumerate(pat) if not st]
        total += w * full * spans_ones(B, alive)
    return total


# --- prediction -----------------------------------------------------------


def test_predict_hand_iterated_ema():
    h = StragglerHistory(6, alpha=0.5)
    emas = []
    for n in [2, 2, 2, 0]:
        h.update(list(range(n)), range(6))
        emas.append(h.ema)
    assert emas == [2.0, 2.0, 2.0, 1.0]
    assert predict_stragglers(h, s_max=2) == 1


def test_predict_fixed_point_and_empty():
    h = StragglerHistory(6)
    assert predict_stragglers(h, 2, s_init=1) == 1
    for _ in range(5):
        h.update([3], range(6))
    assert predict_stragglers(h, 2) == 1
    h.update(range(6), range(6))
    assert predict_stragglers(h, 2) == 2  # capped at s_max


def test_history_probabilities():
    h = StragglerHistory(3)
    h.update([0], [0, 1])
    h.update([], [0, 1])
    # worker 2 never started: prior ema / M = 0.5 / 3
    np.testing.assert_allclose(h.probabilities(), [0.5, 0.0, 0.5 / 3])


# --- expected arrival data --------------------------------------------------------


def test_expected_arrival_zero_probabilities_is_full():
    code = coding.cyclic_repetition(4, 1)
    assert expected_arrival_data(code, np.zeros(4), 640.0) == pytest.approx(4 * 640.0)


def test_expected_arrival_uncoded_loses_with_any_straggling():
    code = coding.cyclic_repetition(4, 0)
    assert expected_arrival_data(code, [0.0, 0.0, 0.01, 0.0], 1.0) < 4.0


def test_expected_arrival_matches_enumeration():
    code = coding.cyclic_repetition(5, 2)
    prob = np.array([0.1, 0.7, 0.3, 0.5, 0.2])
    want = enumerate_expectation(code.entries, prob, 5.0)
    assert expected_arrival_data(code, prob, 1.0) == pytest.approx(want, rel=1e-12)


def test_monte_carlo_within_three_sigma_of_exhaustive():
    code = coding.cyclic_repetition(4, 1)
    prob = np.array([0.1, 0.3, 0.5, 0.2])
    exact = expected_arrival_data(code, prob, 1.0, method="exact")
    n = 20_000
    mc = expected_arrival_data(code, prob, 1.0, method="mc", n_mc=n, rng=np.random.default_rng(3))
    q = exact / 4.0
    assert abs(mc - exact) <= 3 * 4.0 * math.sqrt(q * (1 - q) / n)


def test_expected_arrival_horizon_and_fixed():
    code = coding.cyclic_repetition(3, 1)
    # row 2 finishes late, so only rows 0 and 1 can help; they decode on their own
    assert expected_arrival_data(code, [0.0, 0.0, 0.0], 1.0, finish_times=[1, 1, 9], horizon=5) == 3.0
    # with row 0 always present, straggling row 1 is harmless only if row 2 is on time
    got = expected_arrival_data(code, [0.0, 0.5, 0.0], 1.0, fixed=[0], finish_times=[1, 1, 9], horizon=5)
    assert got == pytest.approx(1.5)
    with pytest.raises(ValueError):
        expected_arrival_data(code, [1.5, 0, 0], 1.0)


# --- choosing s -------------------------------------------------------------------


def codes_by_s():
    return {s: coding.build_two_stage_code(6, s, {}, [], list(range(6)), SPEEDS).combined() for s in range(3)}


def test_choose_zero_probabilities_gives_no_redundancy():
    s, scores = choose_coding_params(codes_by_s(), np.zeros(6), 640.0)
    assert s == 0 and len(set(scores.values())) == 1


def test_choose_high_probabilities_gives_max_redundancy():
    s, _ = choose_coding_params(codes_by_s(), np.full(6, 0.9), 640.0, s_max=2)
    assert s == 2


@pytest.mark.parametrize("seed", range(5))
def test_choose_matches_enumerated_argmax(seed):
    prob = np.random.default_rng(seed).uniform(0, 0.6, 6)
    codes = codes_by_s()
    obj = {s: enumerate_expectation(c.entries, prob, 6.0) for s, c in codes.items()}
    best = max(obj.values())
    want = min(s for s, v in obj.items() if v >= best - 1e-12)
    s, scores = choose_coding_params(codes, prob, 1.0)
    assert s == want
    for k in obj:
        assert scores[k] == pytest.approx(obj[k], rel=1e-12)


def test_choose_seeds_from_history():
    h = StragglerHistory(6)
    for _ in range(4):
        h.update([0, 1], range(6))
    s, _ = choose_coding_params(codes_by_s(), history=h)
    assert s >= 1


# --- the world -------------------------------------------------------------------


def test_sample_world_constant_when_ranges_collapse():
    cfg = small_cfg()
    cfg.slot.r_lo = cfg.slot.r_hi = 500.0
    cfg.slot.EH_max = 0.0
    obs = sample_world(cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(obs.r, 500.0)
    np.testing.assert_array_equal(obs.E_harv, 0.0)
    assert obs.L == cfg.slot.L


def test_sample_world_rate_mean():
    cfg = small_cfg()
    rng = np.random.default_rng(1)
    r = np.array([sample_world(cfg, rng).r[0] for _ in range(10_000)])
    lo, hi = cfg.slot.r_lo, cfg.slot.r_hi
    sigma = (hi - lo) / math.sqrt(12) / math.sqrt(r.size)
    assert abs(r.mean() - (lo + hi) / 2) <= 3 * sigma
    assert r.min() >= lo and r.max() <= hi


def test_no_admission_before_a_partition_finishes():
    cfg = small_cfg(epochs=1)
    cfg.outputs.trace = True
    sim = Simulation(cfg)
    sim.calibrate()
    sim.run_epoch(0)
    # a partition takes at least 200 / 80 slots, so the first two slots carry no data
    first = [r for r in sim.trace if r["t"] < 2]
    assert first and all(r["d"] == 0.0 for r in first)


def test_injection_and_selection_are_seeded():
    cfg = small_cfg()
    a = [simmod.sample_injection(cfg, 4, e) for e in range(50)]
    assert a == [simmod.sample_injection(cfg, 4, e) for e in range(50)]
    assert all(1 <= len(x) <= 2 for x in a)
    assert len(simmod.sample_stage1_workers(cfg, 4, 0)) == cfg.m1 == 3


# --- epochs ------------------------------------------------------------------------


def test_no_stragglers_fast_census_skips_coding():
    cfg = small_cfg(M=3, K=4, s_max=0, s_init=0)
    cfg.workers.cores = [8, 2, 2]
    sim = Simulation(cfg)
    sim.calibrate()
    out = sim.run_epoch(0, injected=[], stage1_workers=[0, 1])
    assert out["success"]
    assert out["tsc"].remaining == () and not out["tsc"].coding_triggered
    assert out["info"]["Kc"] == 4


def three_worker(s_max):
    cfg = small_cfg(M=3, K=6, s_max=s_max, s_init=0)
    cfg.workers.cores = [8, 4, 4]
    sim = Simulation(cfg)
    sim.calibrate()
    return sim, sim.run_epoch(0, injected=[1], stage1_workers=[0, 1])


def test_three_worker_two_stage_epoch():
    sim, out = three_worker(s_max=0)
    tsc = out["tsc"]
    assert tsc.completers == (0,) and tsc.post_census == (1, 2)
    assert tsc.remaining == (4, 5)
    # uncoded stage 2: the epoch ends once every row is in
    assert out["success"] and out["t"] == max(out["delivered_at"].values())
    rep = sim.apply(out, 0)
    assert rep.recovery_error < 1e-9


def test_three_worker_coded_stage_two_beats_straggler():
    _, slow = three_worker(s_max=0)
    sim, out = three_worker(s_max=1)
    tsc = out["tsc"]
    assert tsc.s == 1 and tsc.stage2.support[:, [4, 5]].all()
    assert out["success"] and 1 not in out["delivered_at"]
    assert out["t"] < slow["t"]


def test_tolerated_stragglers_give_oracle_step():
    cfg = small_cfg(scheme="cyclic", s_max=2)
    sim = Simulation(cfg)
    sim.calibrate()
    w0 = sim.model.weights.copy()
    out = sim.run_epoch(0, injected=[1, 4])
    assert out["success"]
    sim.apply(out, 0)
    want = w0 - cfg.learning.eta * learning.full_gradient_oracle(learning.Model(w0), sim.partitions)
    np.testing.assert_allclose(sim.model.weights, want, rtol=1e-9, atol=1e-12)


@pytest.fixture(scope="module")
def runs():
    return {sch: run_experiment(small_cfg(scheme=sch, epochs=30, seed=2)) for sch in ("tsdcfl", "cyclic", "fracrep")}


def test_tolerance_invariant(runs):
    for rep in runs.values():
        for e in rep.epochs:
            if len(e.observed) <= e.s:
                assert e.decoded, (rep.scheme, e.epoch)


def test_coverage_recovers_full_gradient(runs):
    for rep in runs.values():
        errs = [e.recovery_error for e in rep.epochs if e.decoded]
        assert errs and max(errs) < 1e-9


def test_copies_never_exceed_cyclic(runs):
    for e in runs["tsdcfl"].epochs:
        assert e.copies <= 6 * (e.s + 1)


def test_determinism_byte_identical():
    cfg = small_cfg(epochs=5, seed=9)
    cfg.outputs.trace = True
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert report_to_json(a, include_trace=True) == report_to_json(b, include_trace=True)


def test_prediction_monotone_in_injection_rate():
    preds = []
    for n in (0, 1, 2):
        cfg = small_cfg(scheme="cyclic", epochs=8, seed=5)
        cfg.stragglers.min_count = cfg.stragglers.max_count = n
        preds.append(np.array([e.predicted_s for e in run_experiment(cfg).epochs]))
    assert np.all(preds[0] <= preds[1]) and np.all(preds[1] <= preds[2])
    assert preds[2][-1] == 2
