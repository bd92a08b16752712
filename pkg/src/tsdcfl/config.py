"""Experiment configuration: nested dataclasses loaded from and saved to JSON."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace

from .errors import ConfigError

SCHEMES = ("tsdcfl", "cyclic", "fracrep")


@dataclass
class WorkerConfig:
    cores: list = field(default_factory=lambda: [2, 2, 4, 4, 8, 8])
    f_per_core: float = 10.0
    cycles_per_partition: float = 200.0
    p: float = 1.0
    delta: float = 0.01
    xi: float = 0.01
    E0: float = 5.0


@dataclass
class SlotConfig:
    T: float = 1.0
    L: float = 2.0
    L_mode: str = "constant"
    r_lo: float = 320.0
    r_hi: float = 960.0
    EH_max: float = 4.0
    F: float = 50.0


@dataclass
class SchedulerConfig:
    V: float = 1000.0
    lam: float = 1.0
    theta: float | None = None
    alpha: float = 0.5


@dataclass
class LearningConfig:
    task: str = "least_squares"
    dim: int = 10
    n_samples: int = 120
    dataset_path: str | None = None
    eta: float = 0.01
    noise: float = 0.1
    data_seed: int = 0


@dataclass
class StragglerConfig:
    min_count: int = 1
    max_count: int = 2
    slowdown: float = 10.0


@dataclass
class OutputConfig:
    out_dir: str = "results"
    trace: bool = True


@dataclass
class ExperimentConfig:
    scheme: str = "tsdcfl"
    M: int = 6
    M1: int | None = None
    K: int = 6
    s_max: int = 2
    s_init: int = 1
    baseline_s: int | None = None
    epochs: int = 200
    seed: int = 0
    T_comp: int | None = None
    calibration_epochs: int = 20
    deadline_factor: float = 20.0
    stage1_overlap: float = 0.0
    gradient_bits: float | None = None
    arrival_mode: str = "coupled"
    iid_D_max: float = 640.0
    workers: WorkerConfig = field(default_factory=WorkerConfig)
    slot: SlotConfig = field(default_factory=SlotConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    stragglers: StragglerConfig = field(default_factory=StragglerConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    # resolved defaults ---------------------------------------------------
    @property
    def m1(self) -> int:
        return self.M1 if self.M1 is not None else math.ceil(self.M / 2)

    @property
    def s_baseline(self) -> int:
        return self.baseline_s if self.baseline_s is not None else self.s_max

    @property
    def bits_per_gradient(self) -> float:
        return float(self.gradient_bits) if self.gradient_bits is not None else 64.0 * self.learning.dim

    def validate(self) -> "ExperimentConfig":
        problems = {}

        def need(cond, key, msg):
            if not cond:
                problems[key] = msg

        need(self.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}")
        need(isinstance(self.M, int) and self.M >= 1, "M", "must be an integer >= 1")
        need(self.K >= 1, "K", "must be >= 1")
        need(self.M1 is None or 1 <= self.M1 <= self.M, "M1", "must satisfy 1 <= M1 <= M")
        need(0 <= self.s_max < self.M, "s_max", "must satisfy 0 <= s_max < M")
        need(0 <= self.s_init <= self.s_max, "s_init", "must satisfy 0 <= s_init <= s_max")
        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.T_comp is None or self.T_comp >= 1, "T_comp", "must be >= 1 slot")
        need(self.calibration_epochs >= 1, "calibration_epochs", "must be >= 1")
        need(self.deadline_factor >= 1, "deadline_factor", "must be >= 1")
        need(self.stage1_overlap >= 0, "stage1_overlap", "must be >= 0")
        need(self.gradient_bits is None or self.gradient_bits > 0, "gradient_bits", "must be > 0")
        need(self.arrival_mode in ("coupled", "iid"), "arrival_mode", "must be 'coupled' or 'iid'")
        need(self.iid_D_max > 0, "iid_D_max", "must be > 0")
        w = self.workers
        need(len(w.cores) == self.M, "workers.cores", f"needs one entry per worker ({self.M})")
        need(all(c > 0 for c in w.cores), "workers.cores", "all core counts must be > 0")
        for name in ("f_per_core", "cycles_per_partition", "p", "delta", "xi"):
            need(getattr(w, name) > 0, f"workers.{name}", "must be > 0")
        need(w.E0 >= 0, "workers.E0", "must be >= 0")
        sl = self.slot
        need(sl.T > 0, "slot.T", "must be > 0")
        need(sl.L > 0, "slot.L", "must be > 0")
        need(sl.L_mode in ("constant", "poisson"), "slot.L_mode", "must be 'constant' or 'poisson'")
        need(0 < sl.r_lo <= sl.r_hi, "slot.r_lo", "need 0 < r_lo <= r_hi")
        need(sl.EH_max >= 0, "slot.EH_max", "must be >= 0")
        need(sl.F > 0, "slot.F", "must be > 0")
        sc = self.scheduler
        need(sc.V > 0, "scheduler.V", "must be > 0")
        need(sc.lam > 0, "scheduler.lam", "must be > 0")
        need(sc.theta is None or sc.theta >= 0, "scheduler.theta", "must be >= 0")
        need(0 < sc.alpha <= 1, "scheduler.alpha", "must be in (0, 1]")
        lr = self.learning
        need(lr.task in ("least_squares", "logistic"), "learning.task", "must be 'least_squares' or 'logistic'")
        need(lr.dim >= 1, "learning.dim", "must be >= 1")
        need(lr.n_samples >= self.K or lr.dataset_path is not None, "learning.n_samples", "must be >= K")
        need(lr.eta > 0, "learning.eta", "must be > 0")
        need(lr.noise >= 0, "learning.noise", "must be >= 0")
        st = self.stragglers
        need(0 <= st.min_count <= st.max_count <= self.M, "stragglers.min_count", "need 0 <= min_count <= max_count <= M")
        need(st.slowdown >= 1, "stragglers.slowdown", "must be >= 1")
        if self.scheme == "cyclic" or self.scheme == "fracrep":
            need(self.K == self.M, "K", "repetition baselines need K == M")
            need(0 <= self.s_baseline < self.M, "baseline_s", "must satisfy 0 <= baseline_s < M")
            if self.scheme == "fracrep":
                need(self.M % (self.s_baseline + 1) == 0, "baseline_s", "fractional repetition needs (s+1) | M")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "").validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError({"config": f"invalid JSON: {exc}"}) from exc
        if not isinstance(data, dict):
            raise ConfigError({"config": "top level must be a JSON object"})
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        # deep copy so nested sections are not shared with the original
        return replace(copy.deepcopy(self), **{k: v for k, v in kw.items() if v is not None}).validate()


_FLOAT_OK = (int, float)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError({prefix.rstrip(".") or "config": "must be an object"})
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError({f"{prefix}{k}": "unknown field" for k in unknown})
    kwargs, problems = {}, {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        default = f.default_factory() if f.default_factory is not MISSING else f.default
        key = f"{prefix}{name}"
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, key + ".")
            continue
        if value is None or default is None:
            kwargs[name] = value
            continue
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, _FLOAT_OK) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(default, list):
            ok = isinstance(value, list)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            problems[key] = f"expected {type(default).__name__}, got {type(value).__name__}"
        kwargs[name] = value
    if problems:
        raise ConfigError(problems)
    return cls(**kwargs)
