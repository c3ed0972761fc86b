"""Average-reward solvers for the relay queue and structure certificates.

Two solvers compute the optimal long-run throughput theta and a relative
value vector V over queue states:

* ``rvia_solve`` -- relative value iteration with span-seminorm stopping.
  Candidate greedy rules are periodically handed to a certification path
  (exact pinned policy evaluation plus a residual and structure check), so
  near-tie systems where plain iteration oscillates forever still finish
  with a solution tighter than the span rule asks for.
* ``policy_iteration_solve`` -- Howard policy iteration; in-loop evaluations
  run as warm-started relative sweeps and a finishing phase of exact
  pinned solves certifies and completes the improvement.

The certificates (monotonicity, bounded increments, K-concavity with
K = rs + rr, and the monotone action-advantage that makes the optimal rule
a threshold) are checked numerically on the solved value vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateP, NoConvergence, NotThreshold, QueueOutOfRange, SingularEvaluation
from .model import SystemConfig, TabularPolicy

# Slack for argmax ties: below this advantage the source link is kept.
TIE_TOL = 1e-9

# Slack used by all structure certificates.
PROPERTY_SLACK = 1e-9


@dataclass(frozen=True)
class SolverSettings:
    """Stopping rule shared by both solvers.

    tol:       span tolerance on successive value iterates.
    max_iter:  cap on sweeps (per evaluation for policy iteration).
    q0:        reference state pinned to V(q0) = 0.
    """

    tol: float = 1e-10
    max_iter: int = 10**6
    q0: int = 0


@dataclass
class ValueFunction:
    """Solved (theta, V) pair; v[reference_state] == 0 by normalization."""

    v: np.ndarray
    theta: float
    reference_state: int = 0


@dataclass(frozen=True)
class StructureReport:
    monotone: bool
    increments_le_one: bool
    k_concave: bool
    supermodular: bool
    first_violation: Optional[Tuple[str, int]] = None

    @property
    def all_hold(self) -> bool:
        return self.monotone and self.increments_le_one and self.k_concave and self.supermodular


def _require_interior(cfg: SystemConfig):
    if not (0.0 < cfg.ps < 1.0 and 0.0 < cfg.pr < 1.0):
        raise DegenerateP(f"analytic solver needs 0 < p < 1, got ps={cfg.ps} pr={cfg.pr}")


def _indices(cfg: SystemConfig):
    q = np.arange(cfg.nr + 1)
    up = np.minimum(q + cfg.rs, cfg.nr)          # queue after a full source burst
    down = np.maximum(q - cfg.rr, 0)             # queue after a full relay burst
    rew = np.minimum(q, cfg.rr).astype(float)    # packets the relay can deliver
    return up, down, rew


def action_values(values: np.ndarray, cfg: SystemConfig):
    """Expected one-slot reward-plus-continuation for a_r = 0 and a_r = 1.

    Returns (J0, J1) over all queue states.  The three forced channel
    outcomes contribute identically to both; the a_r choice only matters in
    the both-links-on event (probability ps*pr).
    """
    up, down, rew = _indices(cfg)
    qs, qr = cfg.ps_bar, cfg.pr_bar
    base = qs * qr * values + cfg.ps * qr * values[up] + qs * cfg.pr * (rew + values[down])
    j0 = base + cfg.ps * cfg.pr * values[up]
    j1 = base + cfg.ps * cfg.pr * (rew + values[down])
    return j0, j1


def state_action_reward(v: ValueFunction, q: int, a_r: int, cfg: SystemConfig) -> float:
    """J(q, a_r) evaluated from a value vector; scalar convenience wrapper."""
    if q < 0 or q > cfg.nr:
        raise QueueOutOfRange(f"q={q} outside 0..{cfg.nr}")
    j0, j1 = action_values(np.asarray(v.v, dtype=float), cfg)
    return float(j1[q] if a_r else j0[q])


def delta_j(v: ValueFunction, cfg: SystemConfig) -> np.ndarray:
    """Action advantage J(q,1) - J(q,0) for every queue state."""
    j0, j1 = action_values(np.asarray(v.v, dtype=float), cfg)
    return j1 - j0


def greedy_policy(values: np.ndarray, cfg: SystemConfig, tie_tol: float = TIE_TOL) -> np.ndarray:
    """Argmax rule for a_r; ties (advantage <= tie_tol) keep the source link."""
    j0, j1 = action_values(values, cfg)
    return (j1 > j0 + tie_tol).astype(np.int8)


def _policy_dynamics(policy: np.ndarray, cfg: SystemConfig):
    """Induced transition matrix and expected reward of a fixed a_r rule."""
    n = cfg.nr + 1
    up, down, rew = _indices(cfg)
    qs, qr = cfg.ps_bar, cfg.pr_bar
    p = np.zeros((n, n))
    rows = np.arange(n)
    np.add.at(p, (rows, rows), qs * qr)
    np.add.at(p, (rows, up), cfg.ps * qr)
    np.add.at(p, (rows, down), qs * cfg.pr)
    both_to = np.where(policy == 1, down, up)
    np.add.at(p, (rows, both_to), cfg.ps * cfg.pr)
    r = qs * cfg.pr * rew + cfg.ps * cfg.pr * policy * rew
    return p, r


def evaluate_policy_direct(policy: np.ndarray, cfg: SystemConfig, q0: int = 0):
    """Exact average-reward evaluation of a fixed rule with V(q0) pinned to 0.

    Solves the (nr + 2)-dimensional linear system for (V, theta) directly and
    applies one step of iterative refinement so the evaluation residual sits
    near machine precision even for ill-conditioned slow-mixing chains.
    """
    n = cfg.nr + 1
    p, r = _policy_dynamics(policy, cfg)
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = np.eye(n) - p
    m[:n, n] = 1.0
    m[n, q0] = 1.0
    rhs = np.concatenate([r, [0.0]])
    try:
        sol = np.linalg.solve(m, rhs)
        sol += np.linalg.solve(m, rhs - m @ sol)  # one refinement pass
    except np.linalg.LinAlgError as exc:
        raise SingularEvaluation(f"evaluation system singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularEvaluation("evaluation produced non-finite values")
    return float(sol[n]), sol[:n]


def bellman_residual(v: ValueFunction, cfg: SystemConfig) -> float:
    """max_q |theta + V(q) - max_a J(q, a)| for a candidate solution."""
    j0, j1 = action_values(np.asarray(v.v, dtype=float), cfg)
    return float(np.abs(v.theta + v.v - np.maximum(j0, j1)).max())


# Cadence of mid-iteration certification attempts, and the Howard-step
# budget each attempt may spend resolving near-tie states the oscillating
# iterate cannot settle.
POLISH_PERIOD = 5000
POLISH_HOWARD_ROUNDS = 8


def _certified_solution(policy: np.ndarray, cfg: SystemConfig, s: SolverSettings,
                        improve: bool) -> Optional[ValueFunction]:
    """Exact evaluation of a candidate rule, accepted only with a certificate.

    The evaluated pair is returned iff its greedy rule reproduces the policy,
    the optimality-equation residual sits at solver precision, and the value
    vector carries the structural certificates of the canonical solution.
    The structure gate matters on lattices with transient states: those
    states' actions are not pinned by optimality alone, and self-consistent
    solutions built on the wrong resolution satisfy the residual check while
    bending the value shape.  With ``improve`` the check may walk a few
    exact improvement steps first, which resolves near-tie states where
    plain value iteration oscillates indefinitely.
    """
    rounds = POLISH_HOWARD_ROUNDS if improve else 1
    try:
        for _ in range(rounds):
            theta, v_ex = evaluate_policy_direct(policy, cfg, s.q0)
            candidate = ValueFunction(v=v_ex, theta=theta, reference_state=s.q0)
            refined = greedy_policy(v_ex, cfg)
            if np.array_equal(refined, policy):
                ok = (
                    bellman_residual(candidate, cfg) <= min(s.tol, 1e-10) * (1 + abs(theta))
                    and _structure(v_ex, cfg, PROPERTY_SLACK).all_hold
                )
                return candidate if ok else None
            policy = refined
    except SingularEvaluation:
        return None
    return None


def rvia_solve(cfg: SystemConfig, settings: Optional[SolverSettings] = None) -> ValueFunction:
    """Relative value iteration from V = 0.

    Iterates V <- max_a J(., a) - max_a J(q0, a) until the span of the
    successive difference drops below tol; theta is the subtracted reference
    value at convergence, after which the greedy rule is evaluated exactly
    and the polished pair returned when certified (the raw iterate is the
    fallback and itself meets the residual contract).

    Undamped value iteration can oscillate forever at near-tie states, so
    every POLISH_PERIOD sweeps the current greedy rule is offered to the
    certification path; a certified exact solution ends the solve early with
    a strictly tighter residual than the span rule asks for.
    """
    _require_interior(cfg)
    s = settings or SolverSettings()
    if not 0 <= s.q0 <= cfg.nr:
        raise QueueOutOfRange(f"reference state {s.q0} outside 0..{cfg.nr}")
    v = np.zeros(cfg.nr + 1)
    theta = 0.0
    converged = False
    for n in range(s.max_iter):
        j0, j1 = action_values(v, cfg)
        best = np.maximum(j0, j1)
        theta = float(best[s.q0])
        v_next = best - theta
        diff = v_next - v
        span = float(diff.max() - diff.min())
        v = v_next
        if span < s.tol:
            converged = True
            break
        if (n + 1) % POLISH_PERIOD == 0:
            certified = _certified_solution(greedy_policy(v, cfg), cfg, s, improve=True)
            if certified is not None:
                return certified

    raw = ValueFunction(v=v, theta=theta, reference_state=s.q0)
    certified = _certified_solution(greedy_policy(v, cfg), cfg, s, improve=False)
    if certified is not None:
        return certified
    if not converged:
        raise NoConvergence(f"span above {s.tol} after {s.max_iter} iterations")
    return raw


# Sweep budget for one in-loop policy evaluation; intermediate policies on
# slow-mixing chains can need far more, and the exact finishing phase makes
# pushing them to full convergence pointless.
EVAL_SWEEP_CAP = 3000


def policy_iteration_solve(cfg: SystemConfig, settings: Optional[SolverSettings] = None):
    """Howard policy iteration; returns (theta, TabularPolicy).

    Evaluation inside the improvement loop runs as relative value sweeps,
    warm-started from the previous value vector, with the span stopping rule
    (capped at EVAL_SWEEP_CAP sweeps per policy).  The loop ends when the
    greedy rule stops changing or revisits a policy; a finishing phase of
    exact pinned-solve evaluations then certifies (and if necessary
    completes) the improvement, so the returned pair solves the optimality
    equation to solver precision no matter where the sweeps stopped.
    """
    _require_interior(cfg)
    s = settings or SolverSettings()
    v = np.zeros(cfg.nr + 1)
    policy = greedy_policy(v, cfg)
    up, down, rew = _indices(cfg)
    qs, qr = cfg.ps_bar, cfg.pr_bar
    seen = {policy.tobytes()}
    for _ in range(200):
        both = policy == 1
        for _ in range(min(s.max_iter, EVAL_SWEEP_CAP)):
            base = qs * qr * v + cfg.ps * qr * v[up] + qs * cfg.pr * (rew + v[down])
            jp = base + cfg.ps * cfg.pr * np.where(both, rew + v[down], v[up])
            v_next = jp - jp[s.q0]
            diff = v_next - v
            span = float(diff.max() - diff.min())
            v = v_next
            if span < s.tol:
                break
        improved = greedy_policy(v, cfg)
        if np.array_equal(improved, policy):
            break
        policy = improved
        if policy.tobytes() in seen:
            break
        seen.add(policy.tobytes())

    evaluated = {}
    for _ in range(500):
        theta, v_ex = evaluate_policy_direct(policy, cfg, s.q0)
        evaluated[policy.tobytes()] = theta
        improved = greedy_policy(v_ex, cfg)
        if np.array_equal(improved, policy):
            return theta, TabularPolicy(relay_choice=tuple(int(a) for a in policy))
        prior = evaluated.get(improved.tobytes())
        if prior is not None and abs(theta - prior) <= 1e-9 * (1.0 + abs(theta)):
            # revisiting a same-gain rule (up to evaluation noise): a tie
            # plateau where improvement flip-flops between near-equivalent
            # resolutions of knife-edge states
            return theta, TabularPolicy(relay_choice=tuple(int(a) for a in policy))
        policy = improved
    raise NoConvergence("policy iteration did not stabilize")


def extract_threshold(v: ValueFunction, cfg: SystemConfig) -> int:
    """Threshold of the greedy rule: the largest q where the source link wins.

    The returned value follows the strict convention used everywhere in this
    package: the relay link is scheduled at both-on slots iff q > threshold.
    Raises NotThreshold when the greedy rule is not a monotone step function
    (a solver-bug signal) or never prefers the source link.
    """
    rule = greedy_policy(np.asarray(v.v, dtype=float), cfg)
    if np.any(np.diff(rule) < 0):
        raise NotThreshold(f"greedy rule not monotone: {rule.tolist()}")
    zeros = np.flatnonzero(rule == 0)
    if zeros.size == 0:
        raise NotThreshold("greedy rule never selects the source link")
    return int(zeros[-1])


def relay_activation_state(v: ValueFunction, cfg: SystemConfig) -> int:
    """Smallest q whose action advantage is non-negative (within tie slack).

    This is the first queue state at which scheduling the relay link is
    (weakly) optimal -- the observable usually read off an advantage-versus-
    queue plot.  For a strict sign change it equals ``extract_threshold + 1``;
    when the advantage vanishes exactly at the step it equals the threshold.
    """
    dj = delta_j(v, cfg)
    nonneg = np.flatnonzero(dj >= -TIE_TOL)
    if nonneg.size == 0:
        raise NotThreshold("relay link never optimal; advantage negative everywhere")
    return int(nonneg[0])


def _structure(v: np.ndarray, cfg: SystemConfig, slack: float):
    inc = np.diff(v)
    monotone = bool(np.all(inc >= -slack))
    increments = bool(np.all(inc <= 1.0 + slack))
    k = cfg.rs + cfg.rr
    # K-concavity: increments K apart are non-increasing; the comparable
    # range is empty (vacuously true) when the buffer is shorter than K+1.
    width = max(0, len(inc) - k)
    hi = inc[k: k + width]
    lo = inc[:width]
    k_concave = bool(np.all(hi <= lo + slack))
    vf = ValueFunction(v=v, theta=0.0)
    dj = delta_j(vf, cfg)
    ddj = np.diff(dj)
    supermodular = bool(np.all(ddj >= -slack))

    first = None
    if not monotone:
        first = ("monotone", int(np.flatnonzero(inc < -slack)[0]))
    elif not increments:
        first = ("increments_le_one", int(np.flatnonzero(inc > 1.0 + slack)[0]))
    elif not k_concave:
        first = ("k_concave", int(np.flatnonzero(hi > lo + slack)[0]))
    elif not supermodular:
        first = ("supermodular", int(np.flatnonzero(ddj < -slack)[0]))
    return StructureReport(monotone, increments, k_concave, supermodular, first)


def check_value_properties(v: ValueFunction, cfg: SystemConfig,
                           slack: float = PROPERTY_SLACK) -> StructureReport:
    """Certify monotonicity, unit increments and K-concavity of V.

    The report also carries the advantage-monotonicity flag so a single call
    gives the full certificate.
    """
    return _structure(np.asarray(v.v, dtype=float), cfg, slack)


def check_supermodularity(v: ValueFunction, cfg: SystemConfig,
                          slack: float = PROPERTY_SLACK) -> StructureReport:
    """Certify that the action advantage is non-decreasing in q."""
    return _structure(np.asarray(v.v, dtype=float), cfg, slack)


def sign_changes(values: np.ndarray, tol: float = PROPERTY_SLACK) -> int:
    """Number of strict sign flips, ignoring entries within tol of zero."""
    signs = np.sign(np.where(np.abs(values) <= tol, 0.0, values))
    nz = signs[signs != 0]
    if nz.size < 2:
        return 0
    return int(np.sum(np.diff(nz) != 0))


def value_function_csv(v: ValueFunction) -> str:
    """CSV export: one header line carrying theta, then (q, v) rows."""
    lines = [f"theta,{v.theta:.12g}", "q,v"]
    for q, val in enumerate(v.v):
        lines.append(f"{q},{val:.12g}")
    return "\n".join(lines) + "\n"
