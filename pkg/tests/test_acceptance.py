"""End-to-end acceptance checks, one test per criterion.

Each test measures first, records a PASS/FAIL line through the ``criterion``
fixture and only then asserts, so the summary at the end of the run lists
every criterion even when some fail.
"""
import itertools
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from tsdcfl import coding, learning
from tsdcfl import scheduler as sc
from tsdcfl.config import ExperimentConfig
from tsdcfl.reporting import report_to_json, write_epoch_csv, write_report, write_trace_csv
from tsdcfl.simulator import run_experiment
from tsdcfl.verification import verify_baseline, verify_two_stage_grid

SEEDS = range(20)
EPOCHS = 200
SCHEMES = ("tsdcfl", "cyclic", "fracrep")


@pytest.fixture(scope="module")
def comparison():
    """Mean iteration time and loss curve for every (scheme, seed) on the default profile."""
    out = {}
    for scheme, seed in itertools.product(SCHEMES, SEEDS):
        cfg = ExperimentConfig(scheme=scheme, seed=seed, epochs=EPOCHS)
        cfg.outputs.trace = False
        rep = run_experiment(cfg)
        out[scheme, seed] = rep
    return out


def test_criterion_01_two_stage_grid(criterion):
    t0 = time.perf_counter()
    res = verify_two_stage_grid(6, 8, 2)
    elapsed = time.perf_counter() - t0
    ok = res.passed and res.max_recovery_error < 1e-9 and elapsed < 300 and (5, 7, 1) in res.cells
    criterion(1, ok, f"{res.configs} codes, {res.patterns} patterns, {len(res.failures)} failures, "
                     f"max rel err {res.max_recovery_error:.1e}, {elapsed:.1f}s")
    assert ok, res.failures[:5]


def test_criterion_02_baseline_parity(criterion):
    cases = [("cyclic", M, s) for M in (3, 5) for s in (1, 2)] + [("fracrep", 4, 1), ("fracrep", 6, 1), ("fracrep", 6, 2)]
    total, bad, worst = 0, [], 0.0
    for kind, M, s in cases:
        code = coding.cyclic_repetition(M, s) if kind == "cyclic" else coding.fractional_repetition(M, s)
        n, fails, w = verify_baseline(code, s)
        total += n
        worst = max(worst, w)
        bad += [(kind, M, s, f) for f in fails]
    ok = not bad and worst < 1e-9
    criterion(2, ok, f"{len(cases)} codes, {total} patterns, {len(bad)} failures, max rel err {worst:.1e}")
    assert ok, bad[:5]


def test_criterion_03_epoch_equivalence(comparison, criterion):
    reps = [comparison[s, 0] for s in SCHEMES]
    decoded = np.all([[e.decoded for e in r.epochs] for r in reps], axis=0)
    losses = np.array([[e.loss for e in r.epochs] for r in reps])
    gap = float(np.max(np.ptp(losses[:, decoded], axis=0))) if decoded.any() else np.inf
    ok = gap <= 1e-6 and decoded.sum() > 0
    criterion(3, ok, f"{int(decoded.sum())}/{EPOCHS} epochs decoded by all, max loss gap {gap:.1e}")
    assert ok


def test_criterion_04_iteration_time(comparison, criterion):
    mean = {s: np.array([comparison[s, seed].iteration_times().mean() for seed in SEEDS]) for s in SCHEMES}
    parts, ok = [], True
    for base in ("cyclic", "fracrep"):
        wins = int(np.sum(mean["tsdcfl"] < mean[base]))
        p = binomtest(wins, len(SEEDS), 0.5, alternative="greater").pvalue
        below = mean["tsdcfl"].mean() < mean[base].mean()
        ok &= below and p < 0.01
        parts.append(f"vs {base}: {mean['tsdcfl'].mean():.2f} vs {mean[base].mean():.2f}, wins {wins}/{len(SEEDS)}, p={p:.2g}")
    criterion(4, ok, "; ".join(parts))
    assert ok


def test_criterion_05_closed_forms(criterion):
    rng = np.random.default_rng(2024)
    step = 1e-4
    y_bad = d_bad = 0
    for _ in range(1000):
        V, H, D = rng.uniform(0.01, 50), rng.uniform(0, 20), rng.uniform(0.01, 10)
        grid = np.arange(0.0, D + step / 2, step)
        g = grid[np.argmax(V * np.log2(1 + grid) - H * grid)]
        y_bad += abs(sc.solve_auxiliary_y(V, H, D) - g) > step
        # integer queues make the Q = H tie show up
        Q, Hq = rng.integers(0, 6, 2).astype(float) if rng.random() < 0.2 else rng.uniform(0, 20, 2)
        g = grid[np.argmin((Q - Hq) * grid)]
        d_bad += abs(sc.solve_admission_d(Q, Hq, D) - g) > step

    levels = np.round(np.arange(0, 1.0 + 1e-9, 0.05), 10)
    V3 = np.array(list(itertools.product(levels, repeat=3)))
    srv = sc.ServerState(0.0, 1.0)
    ratios = []
    for _ in range(50):
        st = sc.WorkerState(Q=rng.uniform(0, 10, 3), H=np.zeros(3), E=rng.uniform(0.2, 5, 3), R=np.zeros(3),
                            p=1.0, r=rng.uniform(1, 10, 3), f=rng.uniform(0, 2, 3), delta=0.1, xi=0.1, W=1.0)
        caps = sc.transmission_caps(st, 1.0)
        feas = (V3.sum(1) <= 1.0 + 1e-9) & np.all(V3 <= caps + 1e-12, axis=1)
        backlog = np.maximum(st.Q - srv.R_server * st.xi, 0.0)
        obj = (V3 * st.E * st.p + backlog * np.minimum(st.Q, st.r * V3)).sum(1)
        best = obj[feas].max()
        got = sc.transmission_objective(st, srv, sc.solve_transmission_v(st, srv, 1.0, 1.0))
        ratios.append(got / best if best > 0 else 1.0)
    ok = y_bad == 0 and d_bad == 0 and min(ratios) >= 0.95
    criterion(5, ok, f"y misses {y_bad}/1000, d misses {d_bad}/1000, worst greedy ratio {min(ratios):.3f}")
    assert ok


def test_criterion_06_drift_bound(criterion):
    rng = np.random.default_rng(6)
    worst, violations = -np.inf, 0
    for seed in range(10):
        cfg = sc.EpisodeConfig(M=int(rng.integers(2, 7)), slots=1000, V=float(rng.choice([1.0, 10.0, 100.0])),
                               D_max=float(rng.uniform(2, 20)), L=float(rng.integers(1, 4)))
        res = sc.run_episode(cfg, seed=seed)
        gap = res.drift_lhs - res.bound_rhs
        violations += int(np.sum(gap > 1e-9))
        worst = max(worst, float(gap.max()))
    ok = violations == 0
    criterion(6, ok, f"10 episodes x 1000 slots, {violations} violations, max(lhs - rhs) {worst:.3g}")
    assert ok


def test_criterion_07_stability_and_tradeoff(criterion):
    n = 50_000
    mid, fin = slice(int(0.45 * n), int(0.55 * n)), slice(int(0.9 * n), n)
    res = {V: sc.run_episode(sc.EpisodeConfig(slots=n, V=V), seed=0) for V in (1.0, 10.0, 100.0)}
    r = res[10.0]
    worst = 0.0
    for q in (r.Q, r.H, r.E, r.R, r.R_server[:, None]):
        m, f = q[mid].mean(axis=0), q[fin].mean(axis=0)
        worst = max(worst, float(np.max(np.where(m > 0, f / np.maximum(m, 1e-300), np.where(f > 0, np.inf, 0.0)))))
    util = [res[V].throughput_utility() for V in (1.0, 10.0, 100.0)]
    backlog = [float(res[V].Q.mean()) for V in (1.0, 10.0, 100.0)]
    ok = worst <= 2.0 and util[0] <= util[1] <= util[2]
    criterion(7, ok, f"worst final/middle decile ratio {worst:.3f}; utility {np.round(util, 3).tolist()}, "
                     f"mean Q {np.round(backlog, 2).tolist()} for V = 1, 10, 100")
    assert ok


def test_criterion_08_convergence_bound(criterion):
    P = 500
    cfg = ExperimentConfig(epochs=P)
    cfg.outputs.trace = False
    rep = run_experiment(cfg)
    lr = cfg.learning
    X, y, _ = learning.make_synthetic(lr.n_samples, lr.dim, lr.task, lr.data_seed, lr.noise)
    parts = learning.partition_dataset(X, y, cfg.K, lr.data_seed)
    L = learning.lipschitz_constant(parts)
    F0 = learning.objective(learning.Model.zeros(lr.dim), parts)
    Fs = learning.objective(learning.Model(learning.least_squares_optimum(parts)), parts)
    lhs = float(np.mean([e.grad_norm_sq for e in rep.epochs]))
    bp = learning.BoundParams(L=L, eta=lr.eta, P=P, K=cfg.K, m=cfg.M,
                              C1=max(e.C1 for e in rep.epochs), C2=max(e.C2 for e in rep.epochs),
                              zeta_sq=max(e.zeta_sq for e in rep.epochs))
    rhs = learning.convergence_bound(bp, F0, Fs)
    ok = lhs <= rhs
    criterion(8, ok, f"mean ||g||^2 {lhs:.4g} <= bound {rhs:.4g} (L={L:.3g}, C1={bp.C1:.3g}, C2={bp.C2:.3g}, "
                     f"zeta^2={bp.zeta_sq:.3g})")
    assert ok


def test_criterion_09_gradients(criterion):
    rng = np.random.default_rng(9)
    worst_fd = 0.0
    h = 1e-6
    for task in learning.TASKS:
        for _ in range(50):
            X, y, _ = learning.make_synthetic(20, 4, task, seed=int(rng.integers(1 << 30)))
            part = learning.Partition(0, X, y)
            w = rng.standard_normal(4)
            g = learning.partial_gradient(learning.Model(w, task), part)
            fd = np.array([
                (learning.partition_loss(learning.Model(w + h * e, task), part)
                 - learning.partition_loss(learning.Model(w - h * e, task), part)) / (2 * h)
                for e in np.eye(4)
            ])
            worst_fd = max(worst_fd, float(np.max(np.abs(g - fd))))
    X, y, _ = learning.make_synthetic(60, 5, seed=7)
    parts = learning.partition_dataset(X, y, 6, seed=7)
    w_star = learning.least_squares_optimum(parts)
    model = learning.Model.zeros(5)
    eta = 1.0 / learning.lipschitz_constant(parts)
    for _ in range(3000):
        model = learning.sgd_step(model, learning.full_gradient_oracle(model, parts), eta)
    gap = float(np.max(np.abs(model.weights - w_star)))
    ok = worst_fd < 1e-6 and gap < 1e-6
    criterion(9, ok, f"max finite-difference error {worst_fd:.1e}, distance to optimum {gap:.1e}")
    assert ok


def test_criterion_10_determinism(tmp_path, criterion):
    variants = [
        {"scheme": "tsdcfl"},
        {"scheme": "cyclic"},
        {"scheme": "fracrep"},
        {"scheme": "tsdcfl", "learning": {"task": "logistic"}, "slot": {"L_mode": "poisson"}},
        {"scheme": "tsdcfl", "arrival_mode": "iid", "seed": 11},
    ]
    mismatched = []
    for i, v in enumerate(variants):
        blobs = []
        for run in range(2):
            cfg = ExperimentConfig.from_dict({"epochs": 10, "seed": 3, **v})
            rep = run_experiment(cfg)
            d = tmp_path / f"{i}_{run}"
            d.mkdir()
            write_report(rep, d / "r.json")
            write_epoch_csv(rep, d / "e.csv")
            write_trace_csv(rep, d / "t.csv")
            blobs.append([(d / n).read_bytes() for n in ("r.json", "e.csv", "t.csv")]
                         + [report_to_json(rep, include_trace=True).encode()])
        if blobs[0] != blobs[1]:
            mismatched.append(v)
    ok = not mismatched
    criterion(10, ok, f"{len(variants)} configs run twice, {len(mismatched)} differ")
    assert ok, mismatched
