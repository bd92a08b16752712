"""
Per-slot queue dynamics and the drift-plus-penalty decision rules.

Every slot the scheduler picks, per worker, an auxiliary admission target
``y``, the admitted data ``d``, the transmission time ``v`` and the stored
energy ``e_store``; ``step_queues`` then advances the backlog ``Q``, the
virtual admission queue ``H``, the battery ``E``, the outstanding compute
``R`` and the server backlog.

State is kept as arrays indexed by worker so a slot is a handful of
vectorised operations. Utility is measured in bits with ``log2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import EnergyViolation

LN2 = math.log(2.0)
_EPS = 1e-9


def _arr(x, n=None):
    a = np.array(x, dtype=float, ndmin=1)
    if n is not None and a.size == 1 and n != 1:
        a = np.full(n, float(a[0]))
    return a


@dataclass
class WorkerState:
    """Queues and per-worker constants, each field an array over workers."""

    Q: np.ndarray
    H: np.ndarray
    E: np.ndarray
    R: np.ndarray
    p: np.ndarray
    r: np.ndarray
    f: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    W: np.ndarray
    lam: np.ndarray = None

    def __post_init__(self):
        n = max(np.size(getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None)
        if self.lam is None:
            self.lam = 1.0
        for f in fields(self):
            setattr(self, f.name, _arr(getattr(self, f.name), n))
        if any(getattr(self, f.name).size != n for f in fields(self)):
            raise ValueError("all worker fields must have the same length")
        for name in ("Q", "H", "E", "R"):
            if np.any(getattr(self, name) < -_EPS):
                raise ValueError(f"{name} must be nonnegative")
        for name in ("p", "xi", "delta", "W"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be positive")

    @property
    def M(self) -> int:
        return self.Q.size

    def copy(self) -> "WorkerState":
        # fields are already validated arrays, so skip __post_init__
        new = object.__new__(WorkerState)
        new.__dict__.update({k: v.copy() for k, v in self.__dict__.items()})
        return new


@dataclass
class ServerState:
    R_server: float = 0.0
    F: float = 1.0

    def __post_init__(self):
        if self.R_server < 0:
            raise ValueError("R_server must be nonnegative")


@dataclass(frozen=True)
class SlotObservation:
    D_arr: np.ndarray
    E_harv: np.ndarray
    r: np.ndarray
    L: float

    def __post_init__(self):
        for name in ("D_arr", "E_harv", "r"):
            a = _arr(getattr(self, name))
            if np.any(a < 0):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, a)
        if self.L < 0:
            raise ValueError("L must be nonnegative")


@dataclass(frozen=True)
class SlotDecision:
    y: np.ndarray
    d: np.ndarray
    v: np.ndarray
    e_store: np.ndarray
    c: np.ndarray = field(default=None)
    e_up: np.ndarray = field(default=None)
    e_com: np.ndarray = field(default=None)


@dataclass(frozen=True)
class SchedulerParams:
    V: float = 1000.0
    T: float = 1.0
    theta: np.ndarray | float = 0.0


def solve_auxiliary_y(V, H, D_arr, lam=1.0):
    """Maximiser of ``V*log2(1 + lam*y) - H*y`` over ``0 <= y <= D_arr``.

    The stationary point of the ``lam = 1`` objective is ``V/(H ln 2) - 1``;
    the objective is increasing without backlog penalty (``H = 0``). Other
    weights are solved numerically.
    """
    V = float(V)
    H, D_arr, lam = np.broadcast_arrays(_arr(H), _arr(D_arr), _arr(lam))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        stat = np.where(H > 0, V / (H * LN2) - 1.0, np.inf)
    y = np.where(V / LN2 - H <= 0, 0.0, np.clip(stat, 0.0, D_arr))
    for i in np.flatnonzero(lam != 1.0):
        y[i] = _numeric_y(V, H[i], D_arr[i], lam[i])
    return y if y.size > 1 else float(y[0])


def _numeric_y(V, H, D, lam):
    if D <= 0:
        return 0.0
    res = minimize_scalar(
        lambda y: -(V * math.log2(1.0 + lam * y) - H * y),
        bounds=(0.0, D),
        method="bounded",
        options={"xatol": 1e-10},
    )
    best = res.x
    # the bounded search never lands exactly on an endpoint
    for cand in (0.0, D):
        if V * math.log2(1.0 + lam * cand) - H * cand > V * math.log2(1.0 + lam * best) - H * best:
            best = cand
    return float(best)


def solve_admission_d(Q, H, D_arr):
    """Bang-bang minimiser of ``(Q - H) * d`` on ``[0, D_arr]``; ties admit nothing."""
    Q, H, D_arr = np.broadcast_arrays(_arr(Q), _arr(H), _arr(D_arr))
    d = np.where(Q < H, D_arr, 0.0)
    return d if d.size > 1 else float(d[0])


def transmission_utility(states: WorkerState, server: ServerState) -> np.ndarray:
    """Per-unit-time value of transmitting for each worker (negative backlog terms clamp to 0)."""
    backlog = np.maximum(states.Q - server.R_server * states.xi, 0.0)
    return states.E * states.p + backlog * states.r


def transmission_caps(states: WorkerState, T: float) -> np.ndarray:
    """Largest feasible v per worker: slot length, battery left after computing, and backlog."""
    energy_left = np.maximum(states.E - states.f * states.delta, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        backlog_time = np.where(states.r > 0, states.Q / states.r, 0.0)
    return np.minimum.reduce([np.full(states.M, float(T)), energy_left / states.p, backlog_time])


def solve_transmission_v(states: WorkerState, server: ServerState, T: float, L: float) -> np.ndarray:
    """Greedy knapsack over the shared sub-channel time ``T * L``."""
    u = transmission_utility(states, server)
    caps = transmission_caps(states, T)
    v = np.zeros(states.M)
    budget = float(T) * float(L)
    for m in np.lexsort((np.arange(states.M), -u)):
        if budget <= 0:
            break
        if u[m] <= 0:
            continue
        v[m] = min(caps[m], budget)
        budget -= v[m]
    return v


def transmission_objective(states: WorkerState, server: ServerState, v) -> float:
    v = np.asarray(v, dtype=float)
    c = np.minimum(states.Q, states.r * v)
    backlog = np.maximum(states.Q - server.R_server * states.xi, 0.0)
    return float(np.sum(states.E * states.p * v + backlog * c))


def solve_energy_store(E, E_harv, theta=0.0):
    """Harvest everything while the perturbed battery ``E - theta`` is negative, else nothing."""
    E, E_harv, theta = np.broadcast_arrays(_arr(E), _arr(E_harv), _arr(theta))
    e = np.where(E - theta < 0, E_harv, 0.0)
    return e if e.size > 1 else float(e[0])


def default_theta(EH_max, p, T, f_max, delta):
    """Battery perturbation leaving room for one slot of worst-case spending."""
    return np.asarray(EH_max, dtype=float) + np.asarray(p, dtype=float) * T + np.asarray(f_max, dtype=float) * np.asarray(delta, dtype=float)


def decide_slot(states: WorkerState, server: ServerState, obs: SlotObservation, params: SchedulerParams) -> SlotDecision:
    y = _arr(solve_auxiliary_y(params.V, states.H, obs.D_arr, states.lam), states.M)
    d = _arr(solve_admission_d(states.Q, states.H, obs.D_arr), states.M)
    v = solve_transmission_v(states, server, params.T, obs.L)
    e_store = _arr(solve_energy_store(states.E, obs.E_harv, params.theta), states.M)
    c = np.minimum(states.Q, states.r * v)
    return SlotDecision(y, d, v, e_store, c, states.p * v, states.f * states.delta)


def check_decision(decision: SlotDecision, states: WorkerState, obs: SlotObservation, T: float) -> None:
    """Raise ValueError when a decision breaks the slot constraints."""
    tol = 1e-9
    if np.any(decision.v < -tol) or np.any(decision.v > T + tol):
        raise ValueError("transmission time outside [0, T]")
    if decision.v.sum() > T * obs.L + tol:
        raise ValueError("transmission time exceeds the channel budget")
    if np.any(decision.d < -tol) or np.any(decision.d > obs.D_arr + tol):
        raise ValueError("admission outside [0, D]")
    if np.any(decision.e_store < -tol) or np.any(decision.e_store > obs.E_harv + tol):
        raise ValueError("stored energy outside [0, E_harv]")
    if np.any(decision.e_up + decision.e_com > states.E + tol):
        raise EnergyViolation("energy spend exceeds battery")


def step_queues(states: WorkerState, server: ServerState, decision: SlotDecision, obs: SlotObservation):
    """Advance every queue by one slot; returns new (states, server)."""
    c = np.minimum(states.Q, obs.r * decision.v)
    e_up = states.p * decision.v
    e_com = states.f * states.delta
    over = e_up + e_com - states.E
    if np.any(over > 1e-9 * np.maximum(1.0, states.E)):
        bad = np.flatnonzero(over > 0).tolist()
        raise EnergyViolation(f"workers {bad} spend more energy than their battery holds")
    new = states.copy()
    new.r = obs.r.copy()
    new.Q = np.maximum(states.Q + decision.d - c, 0.0)
    new.H = np.maximum(states.H + decision.y - decision.d, 0.0)
    new.E = np.maximum(states.E - e_up - e_com + decision.e_store, 0.0)
    new.R = np.maximum(states.R - states.f, 0.0)
    srv = ServerState(max(server.R_server - server.F, 0.0) + float(np.sum(c * states.xi)), server.F)
    return new, srv


def lyapunov(states: WorkerState, server: ServerState) -> float:
    return 0.5 * float(np.sum(states.H**2 + states.Q**2 + states.E**2 + states.R**2) + server.R_server**2)


def utility(y) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(y, dtype=float))))


@dataclass(frozen=True)
class DriftBounds:
    """Per-slot maxima entering the constant of the drift bound (scalars or per-worker arrays)."""

    D_max: float | np.ndarray
    r_max: float | np.ndarray
    f_max: float | np.ndarray
    EH_max: float
    F_max: float
    T: float = 1.0


def drift_constant(states: WorkerState, bounds: DriftBounds) -> float:
    n = states.M
    D, r, f = (_arr(x, n) for x in (bounds.D_max, bounds.r_max, bounds.f_max))
    T = bounds.T
    per_worker = 3.0 * D**2 + (r * T) ** 2 + (states.p * T + f * states.delta) ** 2 + bounds.EH_max**2 + f**2
    server = bounds.F_max**2 + float(np.sum(r * T * states.xi)) ** 2
    return 0.5 * float(np.sum(per_worker)) + 0.5 * server


def drift_penalty_bound(states, server, decision, obs, V, bounds: DriftBounds) -> float:
    """Upper bound on ``L(t+1) - L(t) - V*sum log2(1+y)`` with realised decisions."""
    c = np.minimum(states.Q, obs.r * decision.v)
    e_up = states.p * decision.v
    e_com = states.f * states.delta
    terms = (
        np.sum(states.Q * (decision.d - c))
        + np.sum(states.H * (decision.y - decision.d))
        + np.sum(states.E * (decision.e_store - e_up - e_com))
        - np.sum(states.R * states.f)
        + server.R_server * (float(np.sum(c * states.xi)) - server.F)
    )
    return drift_constant(states, bounds) - V * utility(decision.y) + float(terms)


def realised_drift_penalty(before, server_before, after, server_after, decision, V) -> float:
    return lyapunov(after, server_after) - lyapunov(before, server_before) - V * utility(decision.y)


def fairness_index(admissions) -> float:
    """Jain index of the time-averaged admissions."""
    x = np.asarray(admissions, dtype=float)
    if x.size == 0:
        raise ValueError("admissions must be nonempty")
    denom = x.size * float(np.sum(x**2))
    if denom == 0:
        return 1.0
    return float(np.sum(x)) ** 2 / denom


# --- stationary episodes --------------------------------------------------


@dataclass(frozen=True)
class EpisodeConfig:
    M: int = 4
    slots: int = 1000
    V: float = 10.0
    T: float = 1.0
    L: float = 2.0
    r_lo: float = 2.0
    r_hi: float = 8.0
    D_max: float = 10.0
    EH_max: float = 3.0
    p: float = 1.0
    f: float = 5.0
    delta: float = 0.05
    xi: float = 0.1
    F: float = 4.0
    E0: float = 5.0
    job_prob: float = 0.2
    job_cycles: float = 10.0
    theta: float | None = None


@dataclass
class EpisodeResult:
    config: EpisodeConfig
    Q: np.ndarray
    H: np.ndarray
    E: np.ndarray
    R: np.ndarray
    R_server: np.ndarray
    y: np.ndarray
    d: np.ndarray
    c: np.ndarray
    drift_lhs: np.ndarray
    bound_rhs: np.ndarray
    bounds: DriftBounds

    def throughput_utility(self) -> float:
        return float(np.sum(np.log(1.0 + self.d.mean(axis=0))))


def run_episode(cfg: EpisodeConfig, seed: int = 0) -> EpisodeResult:
    """Simulate a stationary scheduler episode with i.i.d. arrivals and channels.

    Data arriving while admission is closed is dropped. Compute jobs of
    ``job_cycles`` arrive with probability ``job_prob`` per slot and are
    added after the queue update, so every recorded drift covers exactly one
    application of the slot dynamics. The drift bound is evaluated with the
    realised episode maxima.
    """
    rng = np.random.default_rng(seed)
    M, n = cfg.M, cfg.slots
    theta = cfg.theta if cfg.theta is not None else float(default_theta(cfg.EH_max, cfg.p, cfg.T, cfg.f, cfg.delta))
    params = SchedulerParams(V=cfg.V, T=cfg.T, theta=theta)
    states = WorkerState(
        Q=np.zeros(M), H=np.zeros(M), E=np.full(M, cfg.E0), R=np.zeros(M),
        p=cfg.p, r=cfg.r_lo, f=0.0, delta=cfg.delta, xi=cfg.xi, W=cfg.f,
    )
    server = ServerState(0.0, cfg.F)
    rec = {k: np.zeros((n, M)) for k in ("Q", "H", "E", "R", "y", "d", "c", "f", "D", "r", "EH")}
    Rs = np.zeros(n)
    before_all, decisions = [], []
    lhs = np.zeros(n)
    for t in range(n):
        obs = SlotObservation(
            D_arr=rng.uniform(0.0, cfg.D_max, M),
            E_harv=rng.uniform(0.0, cfg.EH_max, M),
            r=rng.uniform(cfg.r_lo, cfg.r_hi, M),
            L=cfg.L,
        )
        states.r = obs.r.copy()
        states.f = np.minimum(np.minimum(cfg.f, states.R), states.E / cfg.delta)
        dec = decide_slot(states, server, obs, params)
        new, srv = step_queues(states, server, dec, obs)
        lhs[t] = realised_drift_penalty(states, server, new, srv, dec, cfg.V)
        before_all.append((states, server, obs))
        decisions.append(dec)
        for k, val in (("y", dec.y), ("d", dec.d), ("c", dec.c), ("f", states.f), ("D", obs.D_arr), ("r", obs.r), ("EH", obs.E_harv)):
            rec[k][t] = val
        jobs = rng.random(M) < cfg.job_prob
        new.R = new.R + jobs * cfg.job_cycles
        states, server = new, srv
        for k in ("Q", "H", "E", "R"):
            rec[k][t] = getattr(states, k)
        Rs[t] = server.R_server
    bounds = DriftBounds(
        D_max=float(rec["D"].max()), r_max=float(rec["r"].max()), f_max=float(rec["f"].max()),
        EH_max=float(rec["EH"].max()), F_max=cfg.F, T=cfg.T,
    )
    rhs = np.array([drift_penalty_bound(s, sv, dec, o, cfg.V, bounds) for (s, sv, o), dec in zip(before_all, decisions)])
    return EpisodeResult(cfg, rec["Q"], rec["H"], rec["E"], rec["R"], Rs, rec["y"], rec["d"], rec["c"], lhs, rhs, bounds)
