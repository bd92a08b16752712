"""Exhaustive algebraic checks of the two-stage codes and the baselines.

For every code the checks walk all straggler patterns the code claims to
tolerate and compare two independent routes: a rank test for the all-ones
vector (``check_span_condition``) and the least-squares decode. Whenever
the decode succeeds the recovered aggregate is also compared with the sum
of random partial gradients.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import coding

_SPEED_CYCLE = (1.0, 2.0, 3.0)


@dataclass(frozen=True)
class Witness:
    M: int
    K: int
    s: int
    M1: int
    completed: tuple
    overlap: float
    pattern: tuple
    reason: str

    def __str__(self):
        return (f"M={self.M} K={self.K} s={self.s} M1={self.M1} completed={list(self.completed)} "
                f"overlap={self.overlap} stragglers={list(self.pattern)}: {self.reason}")


@dataclass
class GridResult:
    configs: int = 0
    patterns: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)
    cells: dict = field(default_factory=dict)  # (M, K, s) -> passed
    max_recovery_error: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def check_patterns(B, fixed, free, s, rng, dim=3, max_errors=None):
    """Check every pattern of at most ``s`` stragglers among ``free`` rows.

    Returns ``(n_patterns, failures, worst_error)`` where failures are
    ``(pattern, reason)`` pairs.
    """
    B = np.asarray(B.entries if isinstance(B, coding.CodeMatrix) else B, dtype=float)
    K = B.shape[1]
    fixed, free = list(fixed), list(free)
    partials = rng.standard_normal((K, dim))
    target = partials.sum(axis=0)
    coded = [coding.encode_partials(B[i], partials) if np.any(B[i]) else np.zeros(dim) for i in range(B.shape[0])]
    fails, worst, n = [], 0.0, 0
    for size in range(min(s, len(free)) + 1):
        for pattern in itertools.combinations(free, size):
            n += 1
            surv = fixed + [i for i in free if i not in pattern]
            span = bool(surv) and coding.check_span_condition(B[surv], None, range(len(surv)), 0)
            dec = coding.decode(B, surv) if surv else None
            ok_dec = dec is not None and dec.success
            if span != ok_dec:
                fails.append((pattern, f"span condition {span} but decode {ok_dec}"))
                continue
            if not ok_dec:
                fails.append((pattern, "all-ones vector not in the survivors' row span"))
                continue
            g = coding.aggregate_decode(dec.coefficients, [coded[i] for i in dec.survivors])
            err = float(np.max(np.abs(g - target)) / max(np.max(np.abs(target)), 1e-300))
            worst = max(worst, err)
            if err >= coding.RECOVERY_RTOL:
                fails.append((pattern, f"recovery error {err:.3e}"))
            if max_errors is not None and len(fails) >= max_errors:
                return n, fails, worst
    return n, fails, worst


def _corrupt(tsc: coding.TwoStageCode) -> np.ndarray:
    B = tsc.combined().entries.copy()
    if tsc.remaining:
        # wipe one remaining column: no survivor set can rebuild it
        B[:, tsc.remaining[0]] = 0.0
    return B


def verify_two_stage_grid(max_workers=6, max_partitions=8, max_s=2, corrupt=False,
                          overlaps=(0.0, 0.5), seed=0, dim=3) -> GridResult:
    """Walk every (M, K, s, M1, completed set) census split in the grid."""
    rng = np.random.default_rng(seed)
    res = GridResult()
    for M in range(1, max_workers + 1):
        speeds = np.array([_SPEED_CYCLE[w % len(_SPEED_CYCLE)] for w in range(M)])
        for K, s in itertools.product(range(1, max_partitions + 1), range(max_s + 1)):
            cell_ok = True
            for M1, overlap in itertools.product(range(1, M + 1), overlaps):
                stage1 = list(range(M1))
                rows = coding.stage1_assignment(K, speeds[stage1], overlap)
                s1_map = dict(zip(stage1, rows))
                new = list(range(M1, M))
                for r in range(M1 + 1):
                    for completed in itertools.combinations(stage1, r):
                        n_post = M - len(completed)
                        covered = {k for w in completed for k in s1_map[w]}
                        if len(covered) < K and n_post < s + 1:
                            res.skipped += 1  # fewer than s+1 workers left to code
                            continue
                        tsc = coding.build_two_stage_code(K, s, s1_map, completed, new, speeds)
                        B = _corrupt(tsc) if corrupt else tsc.combined().entries
                        n_c = len(tsc.completers)
                        free = list(range(n_c, n_c + len(tsc.post_census)))
                        s_check = tsc.s if tsc.coding_triggered else s
                        n, fails, worst = check_patterns(B, range(n_c), free, s_check, rng, dim, max_errors=1)
                        res.configs += 1
                        res.patterns += n
                        res.max_recovery_error = max(res.max_recovery_error, worst)
                        for pattern, reason in fails:
                            cell_ok = False
                            stragglers = tuple(tsc.post_census[i - n_c] for i in pattern)
                            res.failures.append(Witness(M, K, s, M1, tuple(completed), overlap, stragglers, reason))
            res.cells[(M, K, s)] = cell_ok
    return res


def verify_baseline(code: coding.CodeMatrix, s: int, seed=0, dim=3):
    """All patterns of at most ``s`` stragglers over a one-stage code."""
    rng = np.random.default_rng(seed)
    return check_patterns(code, [], range(code.rows), s, rng, dim)
