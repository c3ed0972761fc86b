"""Threshold-policy Markov chains and the fast optimal-threshold sweep.

Under the greedy rate rule and a threshold link selection, the relay queue
is a finite Markov chain whose recurrent class C does not depend on the
threshold.  The throughput of a threshold q is pi(q) . r(q) over C, so the
optimum is found by sweeping the thresholds in ascending order.

Two sweep paths are implemented and cross-check each other:

* brute force -- a fresh partition-factorization solve (Gaussian
  elimination) per threshold, costing O(|C|^4) flops over the sweep;
* updated     -- the reduced matrix of adjacent thresholds differs by one
  column, so its inverse is carried across the sweep with permuted
  rank-one (Sherman-Morrison) updates, costing O(|C|^3) overall.

The elimination and update kernels are hand-rolled and instrumented with
flop counters so the two complexity classes can be measured directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateP,
    DenominatorNearZero,
    SingularSystem,
    ThresholdNotRecurrent,
)
from .model import SystemConfig

PIVOT_TOL = 1e-13
DENOM_TOL = 1e-12

# Sweep safety limits: a rank-one step dividing by less than SAFE_DENOM,
# producing a correction larger than SAFE_SCALE, or leaving the maintained
# inverse with entries beyond SAFE_INVERSE would amplify roundoff past the
# 1e-8 agreement the update path promises, so the sweep rebuilds the inverse
# by elimination instead of updating.  Heavily drifted chains carry
# stationary ratios far outside these limits; their thresholds are handled
# by rebuilds and, when elimination itself degenerates, by the
# subtraction-free folding solve.
SAFE_DENOM = 1e-3
SAFE_SCALE = 1e5
SAFE_INVERSE = 1e2


class FlopCounter:
    """Running count of floating-point add/sub/mul/div operations."""

    __slots__ = ("total",)

    def __init__(self):
        self.total = 0

    def add(self, n: int):
        self.total += int(n)


def solve_elimination(a: np.ndarray, b: np.ndarray, counter: Optional[FlopCounter] = None,
                      pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Solve a x = b by Gaussian elimination with partial pivoting.

    b may be a vector or a matrix of stacked right-hand sides.  Raises
    SingularSystem when a pivot falls below pivot_tol.  Counted flops follow
    the usual 2n^3/3 + O(n^2) accounting for a single right-hand side.
    """
    a = np.array(a, dtype=float)
    vec = b.ndim == 1
    rhs = np.array(b, dtype=float).reshape(len(b), -1)
    n = a.shape[0]
    k = rhs.shape[1]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < pivot_tol:
            raise SingularSystem(f"pivot {a[piv, col]:.3e} below {pivot_tol} at column {col}")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            rhs[[col, piv]] = rhs[[piv, col]]
        below = n - col - 1
        if below:
            mult = a[col + 1:, col] / a[col, col]
            a[col + 1:, col + 1:] -= np.outer(mult, a[col, col + 1:])
            rhs[col + 1:] -= np.outer(mult, rhs[col])
            a[col + 1:, col] = 0.0
            if counter is not None:
                counter.add(below + 2 * below * (n - col - 1) + 2 * below * k)
    x = np.empty_like(rhs)
    for i in range(n - 1, -1, -1):
        tail = n - 1 - i
        x[i] = (rhs[i] - a[i, i + 1:] @ x[i + 1:]) / a[i, i]
        if counter is not None:
            counter.add(2 * tail * k + k)
    return x[:, 0] if vec else x


def invert_elimination(a: np.ndarray, counter: Optional[FlopCounter] = None) -> np.ndarray:
    """Matrix inverse via elimination against the identity block (~8n^3/3 flops)."""
    return solve_elimination(a, np.eye(a.shape[0]), counter)


@dataclass(frozen=True)
class RecurrentStructure:
    """Recurrent class of the queue chain plus the lattice bookkeeping.

    a, b are the coprime integers with rs/rr = a/b; R = rs/a = rr/b is the
    common lattice step; nr = n*R + l with 0 <= l < R.  ``states`` holds the
    recurrent class computed by reachability, which is authoritative; the
    closed-form size (l+1)(n+1) is recorded alongside because it disagrees
    with the listed state set when l >= 2.
    """

    a: int
    b: int
    R: int
    n: int
    l: int
    states: Tuple[int, ...]
    formula_states: Tuple[int, ...]
    formula_size: int

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def size_matches_formula(self) -> bool:
        return len(self.states) == self.formula_size

    @property
    def set_matches_formula(self) -> bool:
        """Whether the closed-form state list agrees with reachability.

        False in the tight-buffer corner nr < rs + rr, where the lattice
        walk cannot realize every closed-form state without clipping, and
        reachability finds a strictly smaller class.
        """
        return self.states == self.formula_states


def recurrent_class(cfg: SystemConfig) -> RecurrentStructure:
    """Identify the recurrent class by mutual reachability with state 0.

    Transitions considered are the three moves every threshold policy allows
    with positive probability: stay, a full source burst min(q+rs, nr), and a
    full relay burst max(q-rr, 0).  The class is therefore identical for every
    threshold choice.
    """
    if not (0.0 < cfg.ps < 1.0 and 0.0 < cfg.pr < 1.0):
        raise DegenerateP(f"recurrent class needs 0 < p < 1, got ps={cfg.ps} pr={cfg.pr}")

    def moves(q):
        return (min(q + cfg.rs, cfg.nr), max(q - cfg.rr, 0))

    forward = {0}
    stack = [0]
    while stack:
        q = stack.pop()
        for q2 in moves(q):
            if q2 not in forward:
                forward.add(q2)
                stack.append(q2)
    # backward closure: states from which 0 is reachable
    backward = {0}
    changed = True
    while changed:
        changed = False
        for q in range(cfg.nr + 1):
            if q not in backward and any(q2 in backward for q2 in moves(q)):
                backward.add(q)
                changed = True
    states = tuple(sorted(forward & backward))

    g = gcd(cfg.rs, cfg.rr)
    a, b = cfg.rs // g, cfg.rr // g
    step = g
    n, l = divmod(cfg.nr, step)
    lattice = list(range(0, cfg.nr + 1, step))
    if l != 0:
        lattice += list(range(l, cfg.nr + 1, step))
    formula = tuple(sorted(set(lattice)))
    return RecurrentStructure(a=a, b=b, R=step, n=n, l=l, states=states,
                              formula_states=formula, formula_size=(l + 1) * (n + 1))


@dataclass(frozen=True)
class ChainModel:
    """Transition matrix and departure rates over C for one threshold."""

    cfg: SystemConfig
    structure: RecurrentStructure
    q_th: int
    P: np.ndarray
    r: np.ndarray

    @property
    def k(self) -> int:
        """0-based position of the threshold in the sorted recurrent class."""
        return self.structure.states.index(self.q_th)


def departure_rates(cfg: SystemConfig, q_th: int,
                    structure: Optional[RecurrentStructure] = None) -> np.ndarray:
    """Mean per-slot departures at each recurrent state under threshold q_th.

    Above the threshold the relay link runs whenever it is on (probability
    pr); at or below it only runs when the source link is off.
    """
    st = structure or recurrent_class(cfg)
    out = np.empty(st.size)
    for i, c in enumerate(st.states):
        cap = min(c, cfg.rr)
        out[i] = cfg.pr * cap if c > q_th else cfg.ps_bar * cfg.pr * cap
    return out


def build_transition_matrix(cfg: SystemConfig, q_th: int,
                            structure: Optional[RecurrentStructure] = None) -> ChainModel:
    """Row-stochastic transition matrix over C for threshold q_th.

    Masses landing on the same state accumulate (e.g. the full-buffer state
    keeps its source-burst mass in place).
    """
    st = structure or recurrent_class(cfg)
    if q_th not in st.states:
        raise ThresholdNotRecurrent(f"q_th={q_th} not in recurrent class {list(st.states)}")
    idx = {c: i for i, c in enumerate(st.states)}
    m = st.size
    p = np.zeros((m, m))
    qs, qr = cfg.ps_bar, cfg.pr_bar
    for i, c in enumerate(st.states):
        up = idx[min(c + cfg.rs, cfg.nr)]
        down = idx[max(c - cfg.rr, 0)]
        p[i, i] += qs * qr
        if c > q_th:
            p[i, up] += cfg.ps * qr
            p[i, down] += cfg.pr
        else:
            p[i, up] += cfg.ps
            p[i, down] += qs * cfg.pr
    return ChainModel(cfg=cfg, structure=st, q_th=q_th, P=p,
                      r=departure_rates(cfg, q_th, st))


@dataclass
class SteadyState:
    """Stationary distribution over the recurrent class."""

    pi: np.ndarray

    def throughput(self, model: ChainModel) -> float:
        return float(self.pi @ model.r)


def _removed_column(k: int, m: int) -> int:
    # Column dropped from I - P^T when partitioning at threshold index k.
    # It is the column the next threshold will rewrite, capped at the last
    # column for the top of the sweep.
    return min(k + 1, m - 1)


def _column_order(k: int, m: int) -> List[int]:
    # Reduced-matrix column labels after moving the removed column last.
    j = _removed_column(k, m)
    if j < m - 1:
        return list(range(j)) + [m - 1] + list(range(j + 1, m - 1))
    return list(range(m - 1))


def _assemble_pi(x_hat: np.ndarray, order: List[int], removed: int) -> np.ndarray:
    m = len(order) + 1
    x = np.empty(m)
    for pos, label in enumerate(order):
        x[label] = x_hat[pos]
    x[removed] = 1.0
    # sub-roundoff negatives are zeroed; anything larger signals a bad solve
    if x.min() < -1e-9 * max(x.max(), 1.0):
        raise SingularSystem(f"negative stationary mass {x.min():.3e}")
    x = np.where(x < 0.0, 0.0, x)
    return x / x.sum()


@dataclass
class PartitionedSystem:
    """State of the partition factorization at one threshold index.

    Holds the full matrix A = I - P^T, the reduced matrix (removed column
    compacted out, last row dropped), the removed column's remainder y, the
    column-order bookkeeping of the applied permutation, and the reduced
    matrix's current inverse.  When the system was produced by a rank-one
    update, ``update_denominator`` and ``update_scale`` record that step's
    divisor and the largest correction entry for numerical-safety decisions.
    """

    model: ChainModel
    k: int
    A: np.ndarray
    ahat: np.ndarray
    y: np.ndarray
    order: List[int] = field(default_factory=list)
    ahat_inv: Optional[np.ndarray] = None
    update_denominator: Optional[float] = None
    update_scale: float = 0.0

    @property
    def removed(self) -> int:
        return _removed_column(self.k, self.A.shape[0])


def partition_system(model: ChainModel, counter: Optional[FlopCounter] = None) -> PartitionedSystem:
    """Build the reduced system for one threshold and invert it by elimination."""
    m = model.P.shape[0]
    a = np.eye(m) - model.P.T
    k = model.k
    order = _column_order(k, m)
    ahat = a[: m - 1, :][:, order]
    y = a[: m - 1, _removed_column(k, m)].copy()
    inv = invert_elimination(ahat, counter)
    return PartitionedSystem(model=model, k=k, A=a, ahat=ahat, y=y,
                             order=order, ahat_inv=inv)


def steady_state_direct(model: ChainModel, counter: Optional[FlopCounter] = None) -> SteadyState:
    """Stationary vector by partition factorization with a fresh elimination.

    Drops the removed column and the last (redundant) balance equation,
    solves the reduced system for the unnormalized masses with the removed
    state pinned to 1, then normalizes to sum 1.  Strongly drifted chains
    carry huge unnormalized masses; iterative refinement kicks in when the
    first solve leaves a visible residual, which keeps the normalized vector
    at roundoff accuracy without touching the cost of benign solves.
    """
    m = model.P.shape[0]
    a = np.eye(m) - model.P.T
    k = model.k
    order = _column_order(k, m)
    ahat = a[: m - 1, :][:, order]
    y = a[: m - 1, _removed_column(k, m)]
    x_hat = solve_elimination(ahat, -y, counter)
    for _ in range(2):
        resid = ahat @ x_hat + y
        if counter is not None:
            counter.add(2 * (m - 1) * (m - 1) + (m - 1))
        if np.abs(resid).max() <= 1e-13 * (1.0 + float(np.abs(x_hat).max())):
            break
        x_hat += solve_elimination(ahat, -resid, counter)
    return SteadyState(pi=_assemble_pi(x_hat, order, _removed_column(k, m)))


def steady_state_folding(model: ChainModel) -> SteadyState:
    """Stationary vector by state folding, robust to any conditioning.

    Eliminates the highest state at a time using only additions,
    multiplications and divisions of nonnegative numbers, so every entry
    comes out with small componentwise relative error even when the chain is
    drifted far beyond what the partitioned linear solve can represent.
    Used as the fallback when elimination degenerates numerically.
    """
    p = np.array(model.P, dtype=float)
    m = p.shape[0]
    for n in range(m - 1, 0, -1):
        escape = p[n, :n].sum()
        if escape <= 0.0:
            raise SingularSystem(f"state {n} cannot reach lower states; chain reducible")
        p[:n, n] /= escape
        p[:n, :n] += np.outer(p[:n, n], p[n, :n])
    x = np.empty(m)
    x[0] = 1.0
    for n in range(1, m):
        x[n] = x[:n] @ p[:n, n]
    return SteadyState(pi=x / x.sum())


def rank_one_inverse_update(prev: PartitionedSystem,
                            counter: Optional[FlopCounter] = None) -> PartitionedSystem:
    """Advance the reduced-system inverse from threshold index k to k + 1.

    Adjacent thresholds change a single row of P, hence a single column of
    A = I - P^T.  After permuting the retained columns into their new
    positions the reduced matrices differ in exactly one column, so the new
    inverse follows from the old by a Sherman-Morrison update.  Raises
    DenominatorNearZero when the update denominator is tiny; callers fall
    back to a fresh elimination.
    """
    model = prev.model
    cfg, st = model.cfg, model.structure
    m = st.size
    if prev.k + 1 >= m:
        raise ThresholdNotRecurrent(f"no threshold after index {prev.k}")
    k_next = prev.k + 1
    next_model = build_transition_matrix(cfg, st.states[k_next], st)
    a_next = np.eye(m) - next_model.P.T

    j_old = _removed_column(prev.k, m)   # column returning to the reduced matrix
    j_new = _removed_column(k_next, m)   # column leaving it
    order_next = _column_order(k_next, m)

    # Row permutation carrying each retained label to its new position; the
    # re-entering column initially holds the leaving label's old values.
    sigma = [prev.order.index(j_new if lab == j_old else lab) for lab in order_next]
    permuted_inv = prev.ahat_inv[sigma, :]
    ahat_next = a_next[: m - 1, :][:, order_next]
    y_next = a_next[: m - 1, j_new].copy()

    denom = None
    scale = 0.0
    if j_old == j_new:
        # top of the sweep: both thresholds drop the same column, no update
        inv_next = permuted_inv
    else:
        pos = order_next.index(j_old)
        u = a_next[: m - 1, j_old] - prev.A[: m - 1, j_new]
        n = m - 1
        t1 = permuted_inv @ u
        row = permuted_inv[pos, :]
        denom = float(1.0 + row @ u)
        if counter is not None:
            # u build, two matrix-vector products, denominator dot, then the
            # outer product, its scaling, and the subtraction
            counter.add(n + 2 * n * n + 2 * n * n + 2 * n + 3 * n * n)
        if abs(denom) < DENOM_TOL:
            raise DenominatorNearZero(f"update denominator {denom:.3e}")
        scale = float(np.abs(t1).max() * np.abs(row).max() / abs(denom))
        inv_next = permuted_inv - np.outer(t1, row) / denom

    return PartitionedSystem(model=next_model, k=k_next, A=a_next, ahat=ahat_next,
                             y=y_next, order=order_next, ahat_inv=inv_next,
                             update_denominator=denom, update_scale=scale)


def steady_state_from_partition(ps: PartitionedSystem,
                                counter: Optional[FlopCounter] = None) -> SteadyState:
    """Stationary vector from a maintained inverse: x_hat = -inv . y."""
    n = ps.ahat_inv.shape[0]
    x_hat = -(ps.ahat_inv @ ps.y)
    if counter is not None:
        counter.add(2 * n * n + n)
    return SteadyState(pi=_assemble_pi(x_hat, ps.order, ps.removed))


def _update_is_safe(nxt: PartitionedSystem) -> bool:
    """Scale pre-gates on a rank-one update; anything outside is rebuilt."""
    if not np.all(np.isfinite(nxt.ahat_inv)):
        return False
    if nxt.update_denominator is not None and abs(nxt.update_denominator) < SAFE_DENOM:
        return False
    if nxt.update_scale > SAFE_SCALE:
        return False
    return float(np.abs(nxt.ahat_inv).max()) <= SAFE_INVERSE


def _stationary_enough(pi: np.ndarray, model: ChainModel,
                       counter: Optional[FlopCounter]) -> bool:
    """Gate on the quantity actually emitted: the stationarity residual."""
    m = pi.shape[0]
    resid = float(np.abs(pi @ model.P - pi).max())
    if counter is not None:
        counter.add(2 * m * m + m)
    return resid <= 1e-11


@dataclass(frozen=True)
class SweepResult:
    """Outcome of a threshold sweep over the recurrent class."""

    q_opt: int
    throughput: float
    trace: Tuple[Tuple[int, float], ...]
    structure: RecurrentStructure
    fallbacks: int = 0
    degraded: int = 0


@dataclass
class SweepStep:
    """One threshold of the update-path sweep, with provenance flags.

    part is None when elimination itself degenerated numerically and the
    stationary vector came from the folding solve (degraded=True); rebuilt
    marks thresholds whose inverse was recomputed by fresh elimination
    rather than a rank-one update.
    """

    model: ChainModel
    part: Optional[PartitionedSystem]
    pi: SteadyState
    rebuilt: bool
    degraded: bool

    @property
    def throughput(self) -> float:
        return self.pi.throughput(self.model)


def sweep_steps(cfg: SystemConfig, counter: Optional[FlopCounter] = None):
    """Yield a SweepStep per recurrent threshold in ascending order.

    Carries the reduced-system inverse across thresholds by rank-one
    updates, rebuilding by elimination whenever a step is numerically
    unsafe, and degrading to the folding solve for thresholds where the
    partitioned system cannot be solved in double precision at all.
    """
    st = recurrent_class(cfg)

    def rebuild(k):
        model = build_transition_matrix(cfg, st.states[k], st)
        try:
            return model, partition_system(model, counter)
        except SingularSystem:
            return model, None

    part = None
    for k in range(st.size):
        rebuilt = False
        if part is None or k == 0:
            rebuilt = k > 0
            model, part = rebuild(k)
        else:
            nxt = None
            try:
                nxt = rank_one_inverse_update(part, counter)
            except (DenominatorNearZero, SingularSystem):
                nxt = None
            if nxt is not None and _update_is_safe(nxt):
                part, model = nxt, nxt.model
            else:
                rebuilt = True
                model, part = rebuild(k)

        pi = None
        if part is not None:
            try:
                pi = steady_state_from_partition(part, counter)
            except SingularSystem:
                pi = None
            if pi is not None and not _stationary_enough(pi.pi, model, counter):
                pi = None
            if pi is None and not rebuilt:
                # a stale carried inverse may be the culprit; retry fresh
                rebuilt = True
                model, part = rebuild(k)
                if part is not None:
                    try:
                        pi = steady_state_from_partition(part, counter)
                    except SingularSystem:
                        pi = None
                    if pi is not None and not _stationary_enough(pi.pi, model, counter):
                        pi = None
        if pi is None:
            yield SweepStep(model=model, part=part, pi=steady_state_folding(model),
                            rebuilt=rebuilt, degraded=True)
        else:
            yield SweepStep(model=model, part=part, pi=pi, rebuilt=rebuilt, degraded=False)


def _best_of(trace) -> Tuple[int, float]:
    # ties keep the later (larger) threshold, matching the >= update rule
    best_q, best = trace[0][0], 0.0
    for q, val in trace:
        if val >= best:
            best_q, best = q, val
    return best_q, best


def optimal_threshold_search(cfg: SystemConfig,
                             counter: Optional[FlopCounter] = None) -> SweepResult:
    """Sweep all recurrent thresholds with the rank-one update path.

    The first threshold's reduced inverse comes from Gaussian elimination;
    each later one reuses the previous inverse through
    ``rank_one_inverse_update``, falling back to a fresh elimination (and,
    in numerically degenerate corners, the folding solve) for any index
    whose update is unsafe.
    """
    trace = []
    fallbacks = 0
    degraded = 0
    structure = None
    for step in sweep_steps(cfg, counter):
        structure = step.model.structure
        trace.append((step.model.q_th, step.throughput))
        fallbacks += step.rebuilt
        degraded += step.degraded
    best_q, best = _best_of(trace)
    return SweepResult(q_opt=best_q, throughput=best, trace=tuple(trace),
                       structure=structure, fallbacks=fallbacks, degraded=degraded)


def brute_force_search(cfg: SystemConfig,
                       counter: Optional[FlopCounter] = None) -> SweepResult:
    """Sweep all recurrent thresholds with a fresh elimination per threshold."""
    st = recurrent_class(cfg)
    trace = []
    degraded = 0
    for q in st.states:
        model = build_transition_matrix(cfg, q, st)
        try:
            pi = steady_state_direct(model, counter)
        except SingularSystem:
            pi = steady_state_folding(model)
            degraded += 1
        trace.append((q, pi.throughput(model)))
    best_q, best = _best_of(trace)
    return SweepResult(q_opt=best_q, throughput=best, trace=tuple(trace), structure=st,
                       degraded=degraded)


def map_threshold_set(q_opt: int, structure: RecurrentStructure) -> Tuple[int, ...]:
    """All buffer-space thresholds equivalent to a recurrent-class optimum.

    Thresholds between two adjacent recurrent states induce the same link
    selection on the recurrent class, so the whole integer interval up to the
    next recurrent state is optimal; the top state maps only to itself.
    """
    if q_opt not in structure.states:
        raise ThresholdNotRecurrent(f"q={q_opt} not in recurrent class")
    nr = structure.states[-1]
    if q_opt == nr:
        return (nr,)
    q_next = min(c for c in structure.states if c > q_opt)
    return tuple(range(q_opt, q_next))


def threshold_throughput(cfg: SystemConfig, q_th: int,
                         structure: Optional[RecurrentStructure] = None) -> float:
    """Long-run throughput of an arbitrary threshold in {0..nr}.

    Thresholds outside the recurrent class act on it exactly like the largest
    recurrent state at or below them, so the chain is solved there.
    """
    st = structure or recurrent_class(cfg)
    if not 0 <= q_th <= cfg.nr:
        raise ThresholdNotRecurrent(f"threshold {q_th} outside 0..{cfg.nr}")
    anchored = max(c for c in st.states if c <= q_th)
    model = build_transition_matrix(cfg, anchored, st)
    try:
        pi = steady_state_direct(model)
    except SingularSystem:
        pi = steady_state_folding(model)
    return pi.throughput(model)


def sweep_flop_counts(cfg: SystemConfig) -> Tuple[int, int]:
    """(flops_direct, flops_updated) for full sweeps of both paths.

    Only the linear-algebra kernels are counted: eliminations on the direct
    path; the initial inversion, update formula and back-solves on the
    updated path.  Matrix assembly and normalization are excluded from both.
    """
    direct = FlopCounter()
    brute_force_search(cfg, direct)
    updated = FlopCounter()
    optimal_threshold_search(cfg, updated)
    return direct.total, updated.total


def trace_csv(result: SweepResult) -> str:
    """Per-threshold throughput trace as CSV."""
    lines = ["q_th,throughput"]
    for q, val in result.trace:
        lines.append(f"{q},{val:.12g}")
    return "\n".join(lines) + "\n"
