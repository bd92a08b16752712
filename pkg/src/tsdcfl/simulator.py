"""
Slot-level simulation of coded federated training under injected stragglers.

One epoch is one model update. Workers compute the partitions in their code
word, the finished results enter the per-worker arrival process, and the
drift-plus-penalty scheduler decides every slot what is admitted, sent and
stored. The epoch ends at the first slot where the rows delivered so far
decode to the full gradient.

Three schemes share the same world:

* ``tsdcfl``: stage 1 places the partitions uncoded over ``M1`` random
  workers, a census at ``T_comp`` counts who finished, and the remaining
  partitions are coded over the unfinished and the idle workers.
* ``cyclic`` and ``fracrep``: all ``M`` workers start a fixed repetition
  code at slot 0.

Random streams are keyed on ``(seed, purpose, epoch)`` so the straggler
injections and channel draws are paired across schemes.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import coding, learning
from .config import ExperimentConfig
from .errors import EpochFailed
from .scheduler import (
    DriftBounds,
    SchedulerParams,
    ServerState,
    SlotObservation,
    WorkerState,
    decide_slot,
    default_theta,
    drift_penalty_bound,
    fairness_index,
    realised_drift_penalty,
    step_queues,
)

log = logging.getLogger(__name__)

# stream purposes
_INJECT, _SELECT, _CHANNEL, _CALIB = 1, 2, 3, 90
_DONE_TOL = 1e-6
SLOW_RATIO = 0.5  # measured rate below this fraction of nominal marks a straggler


@dataclass(frozen=True)
class WorkerProfile:
    index: int
    cores: int
    f: float  # cycles per slot
    cycles_per_partition: float
    p: float
    delta: float
    xi: float

    @property
    def W(self) -> float:
        """Nominal partitions per slot."""
        return self.f / self.cycles_per_partition


def worker_profiles(cfg: ExperimentConfig) -> list:
    w = cfg.workers
    return [
        WorkerProfile(m, int(c), float(c) * w.f_per_core, w.cycles_per_partition, w.p, w.delta, w.xi)
        for m, c in enumerate(w.cores)
    ]


# --- straggler prediction -------------------------------------------------


@dataclass
class StragglerHistory:
    """Observed straggler counts and an exponential moving average of them."""

    M: int
    alpha: float = 0.5
    ema: float | None = None
    counts: list = field(default_factory=list)
    started: np.ndarray = None
    slow: np.ndarray = None

    def __post_init__(self):
        if self.started is None:
            self.started = np.zeros(self.M)
        if self.slow is None:
            self.slow = np.zeros(self.M)

    def update(self, observed, started) -> None:
        observed, started = sorted(set(observed)), sorted(set(started))
        n = len(observed)
        self.counts.append(n)
        # the first observation seeds the average
        self.ema = float(n) if self.ema is None else self.alpha * n + (1.0 - self.alpha) * self.ema
        self.started[started] += 1
        self.slow[observed] += 1

    def probabilities(self) -> np.ndarray:
        """Per-worker straggling frequency; unseen workers get ema / M."""
        prior = 0.0 if self.ema is None else min(self.ema / self.M, 1.0)
        out = np.full(self.M, prior)
        seen = self.started > 0
        out[seen] = self.slow[seen] / self.started[seen]
        return out


def predict_stragglers(history: StragglerHistory, s_max: int, s_init: int = 0) -> int:
    if history.ema is None:
        return int(min(s_init, s_max))
    return int(min(math.ceil(history.ema - 1e-9), s_max))


# --- expected arrival data ------------------------------------------------


@lru_cache(maxsize=200_000)
def _decodable(entries_bytes: bytes, shape: tuple, rows: frozenset) -> bool:
    B = np.frombuffer(entries_bytes, dtype=float).reshape(shape)
    return coding.decode(B, sorted(rows)).success


def _patterns(prob, n_mc, rng, method="auto"):
    """(straggler mask, weight) pairs: exhaustive up to 8 rows, Monte Carlo beyond."""
    n = prob.size
    if method == "exact" or (method == "auto" and n <= 8):
        for pat in itertools.product((False, True), repeat=n):
            pat = np.array(pat, dtype=bool)
            w = float(np.prod(np.where(pat, prob, 1.0 - prob)))
            if w > 0:
                yield pat, w
        return
    rng = np.random.default_rng(0) if rng is None else rng
    for pat in rng.random((n_mc, n)) < prob:
        yield pat, 1.0 / n_mc


def expected_arrival_data(
    code: coding.CodeMatrix,
    probabilities,
    gradient_bits: float,
    fixed=(),
    finish_times=None,
    horizon: float = math.inf,
    n_mc: int = 2000,
    rng=None,
    method: str = "auto",
) -> float:
    """Expected decodable gradient bits one epoch delivers with this code.

    Row ``m`` straggles independently with ``probabilities[m]`` and then
    delivers nothing; ``fixed`` rows always deliver. When ``finish_times``
    is given, a non-straggling row also misses the epoch if it finishes after
    ``horizon``. A survivor set that decodes yields all ``K`` partial
    gradients' worth of bits and anything else yields none. ``method`` picks
    exhaustive enumeration (``"exact"``), sampling (``"mc"``) or enumeration
    up to 8 free rows (``"auto"``).
    """
    entries = np.ascontiguousarray(code.entries, dtype=float)
    key, shape = entries.tobytes(), entries.shape
    prob = np.asarray(probabilities, dtype=float)
    if np.any((prob < 0) | (prob > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    fixed = sorted({int(f) for f in fixed})
    free = np.array([m for m in range(code.rows) if m not in set(fixed)], dtype=int)
    on_time = np.ones(code.rows, dtype=bool)
    if finish_times is not None:
        on_time = np.asarray(finish_times, dtype=float) <= horizon
    full = code.cols * gradient_bits
    total = 0.0
    for pat, w in _patterns(prob[free], n_mc, rng, method):
        alive = [int(m) for m, st in zip(free, pat) if not st and on_time[m]]
        surv = frozenset(fixed + alive)
        if surv and _decodable(key, shape, surv):
            total += w * full
    return total


def choose_coding_params(candidates: dict, probabilities=None, gradient_bits: float = 1.0, history=None,
                         s_max: int | None = None, **kw) -> tuple:
    """Redundancy level with the most expected arrival data; ties go to the smaller ``s``.

    ``candidates`` maps ``s`` to a code, or to ``(code, finish_times)``. When
    no probabilities are given they are seeded from the history: every row
    straggles with the predicted straggler fraction. Returns ``(s, scores)``.
    """
    if s_max is not None:
        candidates = {s: c for s, c in candidates.items() if s <= s_max}
    if not candidates:
        raise ValueError("no candidate redundancy levels")
    scores = {}
    for s, cand in sorted(candidates.items()):
        code, times = cand if isinstance(cand, tuple) else (cand, None)
        prob = probabilities
        if prob is None:
            M = code.rows
            frac = 0.0 if history is None or history.ema is None else min(history.ema / history.M, 1.0)
            prob = np.full(M, frac)
        scores[s] = expected_arrival_data(code, prob, gradient_bits, finish_times=times, **kw)
    best = max(scores.values())
    slack = 1e-12 * max(1.0, abs(best))
    return min(s for s, v in scores.items() if v >= best - slack), scores


# --- reports --------------------------------------------------------------


@dataclass
class EpochReport:
    epoch: int
    scheme: str
    iteration_time: int
    decoded: bool
    T_comp: int
    Mc: int
    Kc: int
    s: int
    predicted_s: int
    census: bool
    copies: int
    stage1_workers: list
    injected: list
    observed: list
    loss: float
    accuracy: float
    grad_norm_sq: float
    zeta_sq: float
    recovery_error: float
    C1: float
    C2: float
    admitted: list
    mean_Q: float
    mean_H: float
    mean_E: float


@dataclass
class RunReport:
    scheme: str
    seed: int
    T_comp: int
    config: dict
    epochs: list
    slot_trace: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def iteration_times(self) -> np.ndarray:
        return np.array([e.iteration_time for e in self.epochs], dtype=float)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epochs"] = [asdict(e) for e in self.epochs]
        return out


# --- the world ------------------------------------------------------------


def _rng(seed, purpose, epoch):
    return np.random.default_rng([int(seed), int(purpose), int(epoch)])


def sample_injection(cfg: ExperimentConfig, seed: int, epoch: int) -> list:
    st = cfg.stragglers
    rng = _rng(seed, _INJECT, epoch)
    n = int(rng.integers(st.min_count, st.max_count + 1))
    return sorted(int(m) for m in rng.choice(cfg.M, size=n, replace=False))


def sample_stage1_workers(cfg: ExperimentConfig, seed: int, epoch: int) -> list:
    rng = _rng(seed, _SELECT, epoch)
    return sorted(int(m) for m in rng.choice(cfg.M, size=cfg.m1, replace=False))


def sample_world(cfg: ExperimentConfig, rng) -> SlotObservation:
    """One slot of channel rates, harvested energy and sub-channel count.

    ``D_arr`` holds the i.i.d. arrival draw; in coupled mode the simulator
    replaces it with the bits of the partitions finished in the slot.
    """
    sl, M = cfg.slot, cfg.M
    r = rng.uniform(sl.r_lo, sl.r_hi, M)
    eh = rng.uniform(0.0, sl.EH_max, M)
    L = sl.L if sl.L_mode == "constant" else float(max(1, rng.poisson(sl.L)))
    D = rng.uniform(0.0, cfg.iid_D_max, M)
    return SlotObservation(D, eh, r, L)


class _Channel:
    def __init__(self, cfg, seed, purpose, epoch):
        self.rng = _rng(seed, purpose, epoch)
        self.cfg = cfg

    def draw(self) -> SlotObservation:
        return sample_world(self.cfg, self.rng)


@dataclass
class _Row:
    """One worker's task inside an epoch."""

    partitions: list
    upload_bits: float
    cycles: dict  # remaining cycles per partition
    total: dict  # cycles per partition including slowdown
    started_at: int = 0
    busy: int = 0
    arrived: float = 0.0  # bits handed to the arrival process
    sent: float = 0.0
    done_at: int | None = None
    computed_at: int | None = None
    emitted: set = field(default_factory=set)

    @property
    def outstanding(self) -> float:
        return float(sum(self.cycles.values()))

    def progress(self) -> float:
        return float(sum(1.0 - self.cycles[k] / self.total[k] for k in self.partitions))

    def emit(self) -> int:
        """Computed partitions not yet handed to the arrival process."""
        new = [k for k in self.partitions if self.cycles[k] <= 0 and k not in self.emitted]
        self.emitted.update(new)
        return len(new)


class Simulation:
    """Holds the persistent state of one run: queues, model, history."""

    def __init__(self, cfg: ExperimentConfig, partitions=None, data=None):
        self.cfg = cfg.validate()
        self.profiles = worker_profiles(cfg)
        lr = cfg.learning
        if partitions is None:
            if data is None:
                if lr.dataset_path:
                    data = learning.load_csv(lr.dataset_path)
                else:
                    X, y, _ = learning.make_synthetic(lr.n_samples, lr.dim, lr.task, lr.data_seed, lr.noise)
                    data = (X, y)
            partitions = learning.partition_dataset(data[0], data[1], cfg.K, lr.data_seed)
        self.partitions = partitions
        dim = partitions[0].X.shape[1]
        self.X_all = np.vstack([p.X for p in partitions])
        self.y_all = np.concatenate([p.y for p in partitions])
        self.model = learning.Model.zeros(dim, lr.task)
        self.gradient_bits = cfg.bits_per_gradient
        M = cfg.M
        f = np.array([pr.f for pr in self.profiles])
        self.f_nom = f
        self.W = np.array([pr.W for pr in self.profiles])
        theta = cfg.scheduler.theta
        if theta is None:
            theta = default_theta(cfg.slot.EH_max, cfg.workers.p, cfg.slot.T, f, cfg.workers.delta)
        self.params = SchedulerParams(V=cfg.scheduler.V, T=cfg.slot.T, theta=theta)
        self.states = WorkerState(
            Q=np.zeros(M), H=np.zeros(M), E=np.full(M, cfg.workers.E0), R=np.zeros(M),
            p=cfg.workers.p, r=cfg.slot.r_lo, f=0.0, delta=cfg.workers.delta, xi=cfg.workers.xi,
            W=self.W, lam=cfg.scheduler.lam,
        )
        self.server = ServerState(0.0, cfg.slot.F)
        self.history = StragglerHistory(M, cfg.scheduler.alpha)
        self.t_global = 0
        self.trace = []
        self._maxima = np.zeros(4)  # running D, r, f, EH maxima for the traced bound
        self.T_comp = None
        if cfg.scheme in ("cyclic", "fracrep"):
            s = cfg.s_baseline
            self.baseline = coding.cyclic_repetition(M, s) if cfg.scheme == "cyclic" else coding.fractional_repetition(M, s)
        else:
            self.baseline = None

    # -- row construction --------------------------------------------------

    def _make_row(self, m, parts, slowdown):
        cyc = self.profiles[m].cycles_per_partition * (slowdown if m in self._injected else 1.0)
        return _Row(list(parts), self.gradient_bits * len(parts), {k: cyc for k in parts}, {k: cyc for k in parts})

    # -- slot loop ---------------------------------------------------------

    def _slot(self, rows, pending, channel, record):
        """Advance one slot; returns the set of workers whose upload completed."""
        cfg, st = self.cfg, self.states
        M = cfg.M
        world = channel.draw()
        r, eh, L = world.r, world.E_harv, world.L
        R = np.array([rows[m].outstanding if m in rows else 0.0 for m in range(M)])
        f_used = np.minimum(np.minimum(self.f_nom, R), st.E / st.delta)
        f_used[R <= 0] = 0.0
        arrivals = np.zeros(M)
        for m, row in rows.items():
            if row.done_at is not None:
                continue
            if R[m] > 0:
                row.busy += 1
                budget = f_used[m]
                for k in row.partitions:
                    if budget <= 0:
                        break
                    use = min(budget, row.cycles[k])
                    row.cycles[k] -= use
                    budget -= use
                    if row.cycles[k] <= 1e-9:
                        row.cycles[k] = 0.0
            arrivals[m] = row.emit() * self.gradient_bits
            if row.computed_at is None and row.outstanding <= 0:
                row.computed_at = self._t_epoch + 1
        row_partitions_done = arrivals
        if cfg.arrival_mode == "iid":
            D = world.D_arr
        else:
            D = pending + row_partitions_done
        st.R = R
        st.f = f_used
        st.r = r
        obs = SlotObservation(D, eh, r, L)
        dec = decide_slot(st, self.server, obs, self.params)
        new, srv = step_queues(st, self.server, dec, obs)
        acc = self._acc
        acc["admitted"] += dec.d
        acc["Q"] += float(st.Q.mean())
        acc["H"] += float(st.H.mean())
        acc["E"] += float(st.E.mean())
        acc["n"] += 1
        if record:
            self._record(st, self.server, new, srv, dec, obs)
        self.states, self.server = new, srv
        if cfg.arrival_mode == "coupled":
            pending[:] = D - dec.d
            pending[pending < _DONE_TOL] = 0.0
        self.t_global += 1
        delivered = set()
        for m, row in rows.items():
            row.arrived += row_partitions_done[m] if cfg.arrival_mode == "coupled" else 0.0
            row.sent += dec.c[m]
            if row.done_at is not None:
                continue
            if cfg.arrival_mode == "coupled":
                fin = row.outstanding <= 0 and row.arrived >= row.upload_bits - _DONE_TOL
                fin = fin and pending[m] <= 0 and new.Q[m] < _DONE_TOL
            else:
                fin = row.outstanding <= 0 and row.sent >= row.upload_bits - _DONE_TOL
            if fin:
                delivered.add(m)
        return delivered

    def _record(self, st, srv, new, srv_new, dec, obs):
        self._maxima = np.maximum(self._maxima, [obs.D_arr.max(), obs.r.max(), st.f.max(), obs.E_harv.max()])
        bounds = DriftBounds(*self._maxima[:3], EH_max=self._maxima[3], F_max=self.server.F, T=self.cfg.slot.T)
        rhs = drift_penalty_bound(st, srv, dec, obs, self.params.V, bounds)
        lhs = realised_drift_penalty(st, srv, new, srv_new, dec, self.params.V)
        t = self.t_global
        for m in range(self.cfg.M):
            self.trace.append({
                "t": t, "worker": m,
                "Q": float(st.Q[m]), "H": float(st.H[m]), "E": float(st.E[m]), "R": float(st.R[m]),
                "y": float(dec.y[m]), "d": float(dec.d[m]), "v": float(dec.v[m]), "c": float(dec.c[m]),
                "e_store": float(dec.e_store[m]), "bound_rhs": float(rhs), "drift_lhs": float(lhs),
            })

    def _reset_epoch_queues(self):
        self.states.Q[:] = 0.0
        self.states.R[:] = 0.0

    # -- census -----------------------------------------------------------

    def _finish_estimate(self, m, parts, row=None, share=1.0):
        """Nominal slots until worker ``m`` finishes computing and uploading ``parts``."""
        nominal = self.profiles[m].cycles_per_partition
        left = 0.0
        for k in parts:
            frac = row.cycles[k] / row.total[k] if row is not None and k in row.cycles else 1.0
            left += frac * nominal
        r_mean = 0.5 * (self.cfg.slot.r_lo + self.cfg.slot.r_hi) * share
        return math.ceil(left / self.f_nom[m]) + math.ceil(len(parts) * self.gradient_bits / r_mean)

    def _census(self, t, stage1, s1_rows, rows, delivered):
        cfg = self.cfg
        # a stage-1 worker counts as complete once its computation is done
        completed = [m for m in stage1 if rows[m].outstanding <= 0]
        new_workers = [m for m in range(cfg.M) if m not in set(stage1)]
        continuers = [m for m in stage1 if m not in set(completed)]
        post = continuers + new_workers
        s_pred = predict_stragglers(self.history, cfg.s_max, cfg.s_init)
        probs = self.history.probabilities() if self.history.ema is not None else np.full(cfg.M, s_pred / cfg.M)
        for m in continuers:
            row = rows[m]
            if row.busy and row.progress() / row.busy < SLOW_RATIO * self.W[m]:
                probs[m] = 1.0
        s_hi = max(0, min(cfg.s_max, len(post) - 1))
        codes, candidates, fixed = {}, {}, ()
        stage1_map = dict(zip(stage1, s1_rows))
        share = min(1.0, cfg.slot.L / max(len(post), 1))
        for s in range(s_hi + 1):
            try:
                tsc = coding.build_two_stage_code(cfg.K, s, stage1_map, completed, new_workers, self.W)
            except coding.InfeasibleAssignment:
                continue
            codes[s] = tsc
            n_c = len(tsc.completers)
            times = np.zeros(len(tsc.workers))
            for i, m in enumerate(tsc.post_census):
                parts = np.flatnonzero(tsc.stage2.support[i]).tolist()
                times[n_c + i] = t + self._finish_estimate(m, parts, rows.get(m), share)
            candidates[s] = (tsc.combined(), times)
            fixed = tuple(range(n_c))
        row_probs = np.concatenate([np.zeros(len(completed)), probs[post]])
        s, _ = choose_coding_params(candidates, row_probs, self.gradient_bits, fixed=fixed, horizon=self._deadline)
        return codes[s], s_pred

    # -- epoch --------------------------------------------------------------

    def run_epoch(self, epoch: int, *, seed=None, record=None, stage1_only=False, inject=True, purpose=_CHANNEL,
                  injected=None, stage1_workers=None):
        """Simulate one epoch; returns a dict consumed by ``apply``.

        ``injected`` and ``stage1_workers`` override the seeded draws.
        """
        cfg = self.cfg
        seed = cfg.seed if seed is None else seed
        record = cfg.outputs.trace if record is None else record
        M, K = cfg.M, cfg.K
        if injected is not None:
            self._injected = set(int(m) for m in injected)
        else:
            self._injected = set(sample_injection(cfg, seed, epoch)) if inject else set()
        slowdown = cfg.stragglers.slowdown
        channel = _Channel(cfg, seed, purpose, epoch)
        T_comp = self.T_comp if self.T_comp is not None else 10**9
        self._deadline = int(math.ceil(cfg.deadline_factor * T_comp)) if not stage1_only else 10**6
        pending = np.zeros(M)
        self._reset_epoch_queues()
        self._acc = {"admitted": np.zeros(M), "Q": 0.0, "H": 0.0, "E": 0.0, "n": 0}
        s_pred = predict_stragglers(self.history, cfg.s_max, cfg.s_init)

        info = dict(Mc=0, Kc=0, s=0, census=False, copies=0, stage1=[], C1=0.0, C2=0.0)
        tsc = combined = None
        if self.baseline is not None:
            code = self.baseline
            rows = {m: self._make_row(m, np.flatnonzero(code.support[m]).tolist(), slowdown) for m in range(M)}
            info.update(s=cfg.s_baseline, copies=int(code.support.sum()), stage1=list(range(M)))
            survivors_of = lambda dlv: sorted(dlv)  # noqa: E731
            combined = code
        else:
            stage1 = sorted(stage1_workers) if stage1_workers is not None else sample_stage1_workers(cfg, seed, epoch)
            s1_rows = coding.stage1_assignment(K, self.W[stage1], cfg.stage1_overlap, offset=epoch)
            rows = {m: self._make_row(m, parts, slowdown) for m, parts in zip(stage1, s1_rows)}
            info.update(stage1=stage1, copies=int(sum(len(p) for p in s1_rows)))

        delivered, delivered_at = set(), {}
        t, success, survivors = 0, False, None
        while t < self._deadline:
            if self.baseline is None and tsc is None and not stage1_only and t == T_comp:
                tsc, s_pred_c = self._census(t, stage1, s1_rows, rows, delivered)
                s_pred = s_pred_c
                combined = tsc.combined()
                # credited stage-1 partitions plus the stage-2 code's copies
                info.update(census=True, Mc=len(tsc.completers), Kc=K - len(tsc.remaining), s=tsc.s,
                            copies=K - len(tsc.remaining) + tsc.copies())
                for i, m in enumerate(tsc.post_census):
                    parts = np.flatnonzero(tsc.stage2.support[i]).tolist()
                    old = rows.get(m)
                    row = self._make_row(m, parts, slowdown)
                    if old is not None:
                        # keep computed work on partitions that stay in the row
                        for k in parts:
                            if k in old.cycles:
                                row.cycles[k] = old.cycles[k]
                        row.busy = old.busy
                        self.states.Q[m] = 0.0
                        pending[m] = 0.0
                    row.started_at = t
                    rows[m] = row
                if self._check(combined, self._survivor_rows(tsc, delivered)):
                    survivors = self._survivor_rows(tsc, delivered)
                    success = True
                    break
            self._t_epoch = t
            new = self._slot(rows, pending, channel, record)
            t += 1
            for m in new:
                rows[m].done_at = t
                delivered.add(m)
                delivered_at[m] = t
            if not new:
                continue
            if self.baseline is not None:
                if self._check(combined, survivors_of(delivered)):
                    survivors, success = survivors_of(delivered), True
                    break
            elif tsc is None:
                covered = set()
                for m in stage1:
                    if m in delivered:
                        covered.update(rows[m].partitions)
                if len(covered) == K:
                    tsc = coding.build_two_stage_code(K, 0, dict(zip(stage1, s1_rows)), sorted(delivered & set(stage1)), [], self.W)
                    combined = tsc.combined()
                    survivors = list(range(len(tsc.completers)))
                    info.update(Mc=len(tsc.completers), Kc=K)
                    success = True
                    break
            else:
                surv = self._survivor_rows(tsc, delivered)
                if self._check(combined, surv):
                    survivors, success = surv, True
                    break

        started = [m for m, row in rows.items() if row.busy > 0]
        observed = [m for m in started if rows[m].progress() / rows[m].busy < SLOW_RATIO * self.W[m]]
        return dict(
            t=t, success=success, survivors=survivors, combined=combined, tsc=tsc, rows=rows,
            delivered_at=delivered_at, info=info, s_pred=s_pred, started=started, observed=observed,
            injected=sorted(self._injected), acc=self._acc,
        )

    @staticmethod
    def _survivor_rows(tsc, delivered):
        n_c = len(tsc.completers)
        done = [i for i, m in enumerate(tsc.completers) if m in delivered]
        return done + [n_c + i for i, m in enumerate(tsc.post_census) if m in delivered]

    @staticmethod
    def _check(code, survivors):
        if not survivors:
            return False
        e = np.ascontiguousarray(code.entries, dtype=float)
        return _decodable(e.tobytes(), e.shape, frozenset(survivors))

    # -- calibration ------------------------------------------------------

    def calibrate(self) -> int:
        """Median slot at which a stage-1 worker finishes computing, over straggler-free dry runs."""
        if self.cfg.T_comp is not None:
            self.T_comp = int(self.cfg.T_comp)
            return self.T_comp
        saved = (self.states.copy(), ServerState(self.server.R_server, self.server.F), self.t_global, self.baseline)
        self.baseline = None
        times = []
        for e in range(self.cfg.calibration_epochs):
            out = self.run_epoch(e, record=False, stage1_only=True, inject=False, purpose=_CALIB)
            times.extend(row.computed_at for row in out["rows"].values() if row.computed_at is not None)
        self.states, self.server, self.t_global, self.baseline = saved
        self.T_comp = max(1, int(math.ceil(float(np.median(times))))) if times else 1
        return self.T_comp

    # -- learning step ---------------------------------------------------

    def apply(self, out, epoch):
        cfg = self.cfg
        partials = [learning.partial_gradient(self.model, p) for p in self.partitions]
        full = np.sum(partials, axis=0)
        G = np.asarray(partials)
        zeta_sq = float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))
        info = out["info"]
        rec_err, C1, C2 = math.nan, 0.0, 0.0
        if out["success"]:
            code, surv = out["combined"], out["survivors"]
            res = coding.decode(code, surv)
            vectors = [coding.encode_partials(code.entries[i], partials) for i in surv]
            g = coding.aggregate_decode(res.coefficients, vectors)
            rec_err = float(np.linalg.norm(g - full) / max(np.linalg.norm(full), 1e-300))
            weights = np.abs(res.coefficients[:, None] * code.entries[surv]) ** 2
            n1 = len(out["tsc"].completers) if out["tsc"] is not None else 0
            C1 = float(weights[:n1].max()) if n1 else 0.0
            C2 = float(weights[n1:].max()) if len(surv) > n1 else 0.0
            self.model = learning.sgd_step(self.model, g, cfg.learning.eta)
        self.history.update(out["observed"], out["started"])
        acc = out["acc"]
        n = max(acc["n"], 1)
        return EpochReport(
            epoch=epoch, scheme=cfg.scheme, iteration_time=int(out["t"]), decoded=bool(out["success"]),
            T_comp=int(self.T_comp), Mc=int(info["Mc"]), Kc=int(info["Kc"]), s=int(info["s"]),
            predicted_s=int(out["s_pred"]), census=bool(info["census"]), copies=int(info["copies"]),
            stage1_workers=[int(m) for m in info["stage1"]], injected=out["injected"], observed=sorted(out["observed"]),
            loss=learning.loss(self.model, self.X_all, self.y_all),
            accuracy=learning.accuracy(self.model, self.X_all, self.y_all),
            grad_norm_sq=float(full @ full), zeta_sq=zeta_sq, recovery_error=rec_err, C1=C1, C2=C2,
            admitted=acc["admitted"].tolist(), mean_Q=acc["Q"] / n, mean_H=acc["H"] / n, mean_E=acc["E"] / n,
        )


def run_experiment(cfg: ExperimentConfig, partitions=None, data=None) -> RunReport:
    """Run ``cfg.epochs`` epochs of ``cfg.scheme`` and collect the reports."""
    sim = Simulation(cfg, partitions, data)
    sim.calibrate()
    log.info("scheme=%s seed=%d T_comp=%d", cfg.scheme, cfg.seed, sim.T_comp)
    epochs = []
    admitted_total = np.zeros(cfg.M)
    for e in range(cfg.epochs):
        out = sim.run_epoch(e)
        try:
            if not out["success"]:
                raise EpochFailed(f"epoch {e}: no decodable survivor set within {sim._deadline} slots")
        except EpochFailed as exc:
            log.warning("%s", exc)
        admitted_total += out["acc"]["admitted"]
        rep = sim.apply(out, e)
        epochs.append(rep)
        log.debug("epoch %d t=%d decoded=%s s=%d", e, rep.iteration_time, rep.decoded, rep.s)
    times = np.array([r.iteration_time for r in epochs], dtype=float)
    rate = admitted_total / max(sim.t_global, 1)
    summary = {
        "mean_iteration_time": float(times.mean()),
        "median_iteration_time": float(np.median(times)),
        "failed_epochs": int(sum(not r.decoded for r in epochs)),
        "final_loss": epochs[-1].loss,
        "final_accuracy": epochs[-1].accuracy,
        "fairness": fairness_index(rate),
        "total_slots": int(sim.t_global),
        "T_comp": int(sim.T_comp),
        "gradient_bits": float(sim.gradient_bits),
    }
    return RunReport(cfg.scheme, cfg.seed, int(sim.T_comp), cfg.to_dict(), epochs, sim.trace, summary)

