"""
Gradient codes for the two-stage scheme and the repetition baselines.

A code is a real matrix ``B`` whose row ``m`` is the code word of worker ``m``:
the worker transmits ``sum_k B[m, k] * g_k``.  The server recovers
``sum_k g_k`` from any admissible subset of rows by solving
``a^T B_surv = 1``.

Stage-2 matrices are built in three steps: a support mask (which worker
touches which remaining partition), an auxiliary matrix whose every
``s+1`` columns are independent, and a per-column linear solve against
that auxiliary matrix.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    IndivisibleWorkers,
    InfeasibleAssignment,
    MissingPartial,
    SingularSubmatrix,
)

DECODE_TOL = 1e-8
RECOVERY_RTOL = 1e-9


@dataclass(frozen=True)
class CodeMatrix:
    entries: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        support = np.asarray(self.support, dtype=bool).reshape(entries.shape)
        if np.any(entries[~support] != 0.0):
            raise ValueError("entries outside the support must be exactly zero")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "support", support)

    @classmethod
    def from_entries(cls, entries) -> "CodeMatrix":
        entries = np.atleast_2d(np.asarray(entries, dtype=float))
        return cls(entries, entries != 0.0)

    @classmethod
    def empty(cls, rows: int, cols: int) -> "CodeMatrix":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols), dtype=bool))

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def column_degrees(self) -> np.ndarray:
        return self.support.sum(axis=0)

    def row(self, m: int) -> np.ndarray:
        return self.entries[m]

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "entries": self.entries.tolist(),
            "support": self.support.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, data) -> "CodeMatrix":
        if isinstance(data, str):
            data = json.loads(data)
        rows, cols = int(data["rows"]), int(data["cols"])
        entries = np.asarray(data["entries"], dtype=float).reshape(rows, cols)
        support = np.asarray(data["support"], dtype=bool).reshape(rows, cols)
        return cls(entries, support)

    def __eq__(self, other):
        if not isinstance(other, CodeMatrix):
            return NotImplemented
        return (
            self.entries.shape == other.entries.shape
            and np.array_equal(self.entries, other.entries)
            and np.array_equal(self.support, other.support)
        )

    __hash__ = None


@dataclass(frozen=True)
class AuxiliaryMatrix:
    entries: np.ndarray
    nodes: tuple = ()

    @property
    def s_plus_1(self) -> int:
        return self.entries.shape[0]

    @property
    def width(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class StragglerPattern:
    straggler_set: frozenset
    total_workers: int

    def __post_init__(self):
        st = frozenset(int(i) for i in self.straggler_set)
        if any(i < 0 or i >= self.total_workers for i in st):
            raise ValueError(f"straggler indices {sorted(st)} outside [0, {self.total_workers})")
        object.__setattr__(self, "straggler_set", st)

    @property
    def survivors(self) -> tuple:
        return tuple(i for i in range(self.total_workers) if i not in self.straggler_set)

    def tolerated_by(self, s: int) -> bool:
        return len(self.straggler_set) <= s


@dataclass(frozen=True)
class DecodeResult:
    survivors: tuple
    coefficients: np.ndarray
    residual: float
    success: bool

    def full_coefficients(self, rows: int) -> np.ndarray:
        """Coefficients scattered back onto all ``rows`` workers (zeros for stragglers)."""
        a = np.zeros(rows)
        a[list(self.survivors)] = self.coefficients
        return a


def largest_remainder(total: int, weights, caps=None) -> np.ndarray:
    """Split ``total`` into integers proportional to ``weights``.

    Fractions are rounded by the largest-remainder rule, ties to the lower
    index. Shares above ``caps`` are clipped and the excess is spread over the
    unclipped entries; if every entry saturates the leftover is dropped, so the
    result can sum to less than ``total``.
    """
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    shares = np.zeros(n, dtype=int)
    if n == 0 or total <= 0:
        return shares
    caps = np.full(n, np.iinfo(np.int64).max) if caps is None else np.broadcast_to(np.asarray(caps, dtype=np.int64), (n,))
    remaining = int(total)
    while remaining > 0:
        active = np.flatnonzero(shares < caps)
        if active.size == 0:
            break
        w = weights[active]
        if w.sum() <= 0:
            w = np.ones_like(w)
        raw = remaining * w / w.sum()
        base = np.floor(raw).astype(int)
        extra = remaining - int(base.sum())
        frac = raw - base
        order = sorted(range(active.size), key=lambda i: (-frac[i], active[i]))
        for i in order[:extra]:
            base[i] += 1
        add = np.minimum(base, caps[active] - shares[active])
        if add.sum() == 0:
            break
        shares[active] += add
        remaining -= int(add.sum())
    return shares


def stage1_assignment(K: int, speeds, overlap: float = 0.0, offset: int = 0) -> list:
    """Uncoded cyclic placement of K partitions over the stage-1 workers.

    Worker loads are proportional to ``speeds``; the total number of copies is
    ``round(K * (1 + overlap))`` so ``overlap > 0`` makes neighbouring blocks
    share partitions. Returns one partition list per worker.
    """
    speeds = np.asarray(speeds, dtype=float)
    copies = int(round(K * (1.0 + overlap)))
    loads = largest_remainder(copies, speeds, caps=K)
    rows, pos = [], int(offset) % max(K, 1)
    for load in loads:
        rows.append([(pos + j) % K for j in range(int(load))])
        pos = (pos + int(load)) % K
    return rows


def build_support(K_rem: int, s: int, speeds, held=None) -> np.ndarray:
    """Support mask of the stage-2 code over the remaining partitions.

    Rows are ordered continuing stage-1 workers first (``held`` gives the
    remaining partitions each one already owns), then the newly started
    workers whose relative rates are ``speeds``. New copies are split over
    the new workers in proportion to their rate, after which each column is
    handed to the workers with the most unused quota. Columns that cannot be
    completed that way are repaired with any other row not yet holding them.
    """
    if K_rem < 1:
        raise ValueError("K_rem must be >= 1")
    if s < 0:
        raise ValueError("s must be >= 0")
    speeds = np.asarray(speeds, dtype=float).reshape(-1)
    held = np.zeros((0, K_rem), dtype=bool) if held is None else np.asarray(held, dtype=bool).reshape(-1, K_rem)
    n_cont, n_new = held.shape[0], speeds.size
    rows = n_cont + n_new
    if rows < s + 1:
        raise InfeasibleAssignment(f"{rows} workers cannot give each partition {s + 1} distinct copies")

    support = np.zeros((rows, K_rem), dtype=bool)
    for k in range(K_rem):
        holders = np.flatnonzero(held[:, k])[: s + 1]
        support[holders, k] = True

    need = (s + 1) - support.sum(axis=0)
    quota = largest_remainder(int(need.sum()), speeds, caps=K_rem)

    for k in sorted(range(K_rem), key=lambda k: (-need[k], k)):
        want = int(need[k])
        if want == 0:
            continue
        cand = [j for j in range(n_new) if quota[j] > 0 and not support[n_cont + j, k]]
        cand.sort(key=lambda j: (-quota[j], j))
        for j in cand[:want]:
            support[n_cont + j, k] = True
            quota[j] -= 1
        short = want - min(want, len(cand))
        if short == 0:
            continue
        load = support.sum(axis=1)
        spare = [r for r in range(rows) if not support[r, k]]
        if len(spare) < short:
            raise InfeasibleAssignment(f"partition {k} cannot reach {s + 1} distinct workers")

        def repair_key(r):
            if r >= n_cont:
                return (0, load[r] / max(speeds[r - n_cont], 1e-12), r)
            return (1, load[r], r)

        spare.sort(key=repair_key)
        for r in spare[:short]:
            support[r, k] = True
    return support


def build_auxiliary(s: int, width: int) -> AuxiliaryMatrix:
    """(s+1) x width Vandermonde matrix on nodes 2, 3, ..., width+1.

    Node 1 is skipped on purpose: with it, the all-ones target of every column
    solve would coincide with that node's own column, which pins the whole
    column on one worker and breaks decoding when that worker straggles.
    """
    if width < s + 1:
        raise ValueError(f"width {width} must be >= s+1 = {s + 1}")
    nodes = np.arange(2, width + 2, dtype=float)
    entries = np.vander(nodes, N=s + 1, increasing=True).T
    return AuxiliaryMatrix(entries, tuple(nodes.tolist()))


def fill_code_matrix(support, aux: AuxiliaryMatrix) -> CodeMatrix:
    support = np.asarray(support, dtype=bool)
    rows, cols = support.shape
    if rows != aux.width:
        raise ValueError(f"support has {rows} rows, auxiliary matrix has width {aux.width}")
    deg = support.sum(axis=0)
    if np.any(deg != aux.s_plus_1):
        raise ValueError(f"every column needs exactly {aux.s_plus_1} supported rows, got {deg.tolist()}")
    entries = np.zeros((rows, cols))
    ones = np.ones(aux.s_plus_1)
    for k in range(cols):
        r = np.flatnonzero(support[:, k])
        sub = aux.entries[:, r]
        try:
            vals = np.linalg.solve(sub, ones)
        except np.linalg.LinAlgError as exc:
            raise SingularSubmatrix(f"column {k}: auxiliary submatrix on rows {r.tolist()} is singular") from exc
        if not np.all(np.isfinite(vals)) or np.linalg.cond(sub) > 1e12:
            raise SingularSubmatrix(f"column {k}: auxiliary submatrix on rows {r.tolist()} is ill-conditioned")
        entries[r, k] = vals
    return CodeMatrix(entries, support)


def _as_array(B) -> np.ndarray:
    return B.entries if isinstance(B, CodeMatrix) else np.atleast_2d(np.asarray(B, dtype=float))


def _ones_in_rowspan(rows: np.ndarray, K: int) -> bool:
    if rows.shape[0] == 0:
        return K == 0
    scale = max(1.0, float(np.abs(rows).max()))
    tol = 1e-9 * scale
    r = np.linalg.matrix_rank(rows, tol=tol)
    return np.linalg.matrix_rank(np.vstack([rows, np.ones(K)]), tol=tol) == r


def check_span_condition(B_stage1, B_stage2, Mc_set: Iterable[int], s: int) -> bool:
    """True iff the all-ones vector lies in the row span of every admissible survivor set.

    Rows of ``B_stage1`` listed in ``Mc_set`` are durable; any ``s`` rows of
    ``B_stage2`` may straggle. Membership is tested by comparing ranks, which
    keeps this independent of the least-squares route used by ``decode``.
    """
    b1 = _as_array(B_stage1) if B_stage1 is not None else np.zeros((0, _as_array(B_stage2).shape[1]))
    b2 = _as_array(B_stage2) if B_stage2 is not None else np.zeros((0, b1.shape[1]))
    if b1.shape[1] != b2.shape[1]:
        raise ValueError("stage matrices must share the column count")
    K = b1.shape[1]
    fixed = b1[sorted(set(Mc_set))] if len(b1) else b1
    n2 = b2.shape[0]
    s = min(s, n2)
    for stragglers in itertools.combinations(range(n2), s):
        keep = [i for i in range(n2) if i not in stragglers]
        if not _ones_in_rowspan(np.vstack([fixed, b2[keep]]), K):
            return False
    return True


def decode(B_combined, survivors: Iterable[int], tol: float = DECODE_TOL) -> DecodeResult:
    B = _as_array(B_combined)
    surv = tuple(sorted(set(int(i) for i in survivors)))
    if not surv:
        raise ValueError("survivors must be nonempty")
    K = B.shape[1]
    sub = B[list(surv)]
    target = np.ones(K)
    coeffs, *_ = np.linalg.lstsq(sub.T, target, rcond=None)
    residual = float(np.max(np.abs(coeffs @ sub - target))) if K else 0.0
    return DecodeResult(surv, coeffs, residual, residual < tol)


def encode_partials(row, partial_gradients) -> np.ndarray:
    """Coded gradient ``sum_k row[k] * g_k`` over the row's nonzero entries.

    ``partial_gradients`` is a sequence indexed by partition or a mapping
    partition -> vector; partitions outside the support may be missing.
    """
    row = np.asarray(row, dtype=float)
    support = np.flatnonzero(row)
    if isinstance(partial_gradients, Mapping):
        get = partial_gradients.get
    else:
        if len(partial_gradients) != row.size:
            raise ValueError(f"row has {row.size} entries but {len(partial_gradients)} partials were given")
        get = lambda k: partial_gradients[k]  # noqa: E731
    out = None
    for k in support:
        g = get(int(k))
        if g is None:
            raise MissingPartial(f"partial gradient for partition {int(k)} is missing")
        term = row[k] * np.asarray(g, dtype=float)
        out = term if out is None else out + term
    if out is None:
        for k in range(row.size):
            g = get(k)
            if g is not None:
                return np.zeros_like(np.asarray(g, dtype=float))
        raise MissingPartial("row is empty and no partial fixes the gradient dimension")
    return out


def aggregate_decode(coeffs, coded_vectors: Sequence) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coded_vectors) != coeffs.size:
        raise ValueError(f"{coeffs.size} coefficients for {len(coded_vectors)} coded vectors")
    stack = np.asarray([np.asarray(v, dtype=float) for v in coded_vectors])
    return coeffs @ stack


def cyclic_repetition(M: int, s: int) -> CodeMatrix:
    """Worker m holds partitions m, m+1, ..., m+s (mod M); K = M."""
    if M < s + 1 or s < 0:
        raise ValueError(f"cyclic repetition needs M >= s+1, got M={M}, s={s}")
    support = np.zeros((M, M), dtype=bool)
    for m in range(M):
        support[m, [(m + j) % M for j in range(s + 1)]] = True
    return fill_code_matrix(support, build_auxiliary(s, M))


def fractional_repetition(M: int, s: int) -> CodeMatrix:
    """s+1 groups of M/(s+1) workers; inside a group the blocks are disjoint and cover all K = M partitions."""
    if s < 0 or (M % (s + 1)) != 0:
        raise IndivisibleWorkers(f"s+1 = {s + 1} does not divide M = {M}")
    group = M // (s + 1)
    block = s + 1
    entries = np.zeros((M, M))
    for m in range(M):
        j = m % group
        entries[m, j * block:(j + 1) * block] = 1.0
    return CodeMatrix.from_entries(entries)


@dataclass(frozen=True)
class TwoStageCode:
    """Code for one epoch after the stage-1 census.

    ``credit`` rows belong to the stage-1 completers: each completed partition
    is counted once, by the lowest-numbered completer that holds it, so the
    rows are disjoint 0/1 vectors. ``stage2`` rows belong to ``post_census``
    workers (continuers first, then new workers) and are zero on the
    completed columns.
    """

    K: int
    s: int
    completers: tuple
    credit: CodeMatrix
    post_census: tuple
    remaining: tuple
    stage2: CodeMatrix
    reduced: CodeMatrix | None = field(default=None)

    @property
    def workers(self) -> tuple:
        return self.completers + self.post_census

    def combined(self) -> CodeMatrix:
        return CodeMatrix(
            np.vstack([self.credit.entries, self.stage2.entries]),
            np.vstack([self.credit.support, self.stage2.support]),
        )

    @property
    def coding_triggered(self) -> bool:
        return len(self.remaining) > 0

    def copies(self) -> int:
        return int(self.stage2.support.sum())


def build_two_stage_code(
    K: int,
    s: int,
    stage1_rows: Mapping[int, Sequence[int]],
    completed: Iterable[int],
    new_workers: Sequence[int],
    speeds,
) -> TwoStageCode:
    """Assemble credit rows and the stage-2 code from a census outcome.

    ``stage1_rows`` maps each stage-1 worker to its uncoded partitions,
    ``completed`` lists the stage-1 workers whose results arrived, and
    ``speeds[w]`` is the rate of worker ``w``. ``s`` is clamped to what the
    post-census worker count can support.
    """
    completers = tuple(sorted(set(completed)))
    credit = np.zeros((len(completers), K))
    done = set()
    for i, w in enumerate(completers):
        for k in stage1_rows[w]:
            if k not in done:
                credit[i, k] = 1.0
                done.add(k)
    remaining = tuple(k for k in range(K) if k not in done)
    continuers = tuple(w for w in sorted(stage1_rows) if w not in set(completers))
    post = continuers + tuple(new_workers)
    s_eff = max(0, min(int(s), len(post) - 1))
    stage2 = CodeMatrix.empty(len(post), K)
    reduced = None
    if remaining:
        if not post:
            raise InfeasibleAssignment("partitions remain but no worker is left to code them")
        held = np.array([[k in set(stage1_rows[c]) for k in remaining] for c in continuers], dtype=bool).reshape(len(continuers), len(remaining))
        support = build_support(len(remaining), s_eff, [speeds[w] for w in new_workers], held)
        reduced = fill_code_matrix(support, build_auxiliary(s_eff, len(post)))
        entries = np.zeros((len(post), K))
        mask = np.zeros((len(post), K), dtype=bool)
        entries[:, list(remaining)] = reduced.entries
        mask[:, list(remaining)] = reduced.support
        stage2 = CodeMatrix(entries, mask)
    return TwoStageCode(K, s_eff, completers, CodeMatrix.from_entries(credit), post, remaining, stage2, reduced)


def straggler_patterns(n: int, s: int):
    """All straggler sets of size <= s over n rows."""
    for size in range(min(s, n) + 1):
        yield from itertools.combinations(range(n), size)
