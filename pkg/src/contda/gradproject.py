"""Euclidean projection of an update direction onto gradient half-spaces.

The continual step direction w solves

    min_w 1/2 ||w - g||^2   s.t.  <c_i, w> >= 0 for each constraint row c_i,

where g is the raw update gradient and the c_i are reference-loss gradients
(source batch, pooled memory batch).  Stationarity gives w = g + sum_i u_i c_i
with multipliers u >= 0, so inactive constraints leave g untouched and active
ones add just enough of the constraint gradient to zero the violated slack.

For the two-constraint case the active set is found by closed-form
enumeration of its four possibilities; the general entry point falls back to
subset enumeration or projected gradient ascent on the dual.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .numerics import require_finite

EPS_SCALE = 1e-9
CASE_NAMES = {(): "interior", (0,): "source-active",
              (1,): "memory-active", (0, 1): "both-active"}


@dataclass(frozen=True)
class GradientSet:
    """Raw update gradient plus the constraint gradients, all length P."""

    g_t: np.ndarray
    g_s: np.ndarray
    g_dm: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "g_t", np.asarray(self.g_t, dtype=np.float64))
        object.__setattr__(self, "g_s", np.asarray(self.g_s, dtype=np.float64))
        if self.g_dm is not None:
            object.__setattr__(self, "g_dm", np.asarray(self.g_dm, dtype=np.float64))
        for name in ("g_t", "g_s", "g_dm"):
            v = getattr(self, name)
            if v is None:
                continue
            if v.ndim != 1:
                raise DimensionError(f"{name} must be a vector")
            if v.shape != self.g_t.shape:
                raise DimensionError("gradients disagree on parameter count")
            require_finite(v, name)


@dataclass(frozen=True)
class ProjectionResult:
    w: np.ndarray
    u_star: np.ndarray
    case: str
    objective: float
    diagnostics: dict

    @property
    def kkt_ok(self) -> bool:
        return all(self.diagnostics[k] for k in
                   ("primal_feasible", "dual_feasible",
                    "complementary", "stationary"))


def tolerance(g, constraints) -> float:
    """Feasibility tolerance scaled to the largest gradient magnitude."""
    norms = [np.linalg.norm(g)] + [np.linalg.norm(c) for c in constraints]
    return EPS_SCALE * max(1.0, *norms)


def kkt_check(w, u, g, constraints, eps) -> dict:
    """Boolean KKT diagnostics plus the residuals they were judged on."""
    slacks = np.array([c @ w for c in constraints])
    stat = w - g
    for ui, c in zip(u, constraints):
        stat = stat - ui * c
    comp = np.array([abs(ui * si) for ui, si in zip(u, slacks)])
    comp_tol = np.array([eps * max(1.0, abs(ui)) for ui in u])
    return {
        "primal_feasible": bool(slacks.size == 0 or slacks.min() >= -eps),
        "dual_feasible": bool(u.size == 0 or u.min() >= -eps),
        "complementary": bool(comp.size == 0 or np.all(comp <= comp_tol)),
        "stationary": bool(np.linalg.norm(stat) <= eps),
        "slacks": slacks,
        "stationarity_residual": float(np.linalg.norm(stat)),
    }


def _solve_subset(g, constraints, subset):
    """Multipliers for the given active subset, or None when too ill-posed.

    Solves Gram(u) = -C g for the subset's rows; a tiny ridge is added only
    when the Gram determinant collapses relative to its trace.
    """
    if not subset:
        return np.zeros(0)
    C = np.stack([constraints[i] for i in subset])
    G = C @ C.T
    b = -(C @ g)
    if len(subset) == 1:
        if G[0, 0] <= 0.0:
            return None
        return b / G[0, 0]
    det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    tr = G[0, 0] + G[1, 1]
    if det < 1e-14 * max(tr * tr, 1e-300):
        G = G + 1e-12 * max(tr, 1.0) * np.eye(len(subset))
    try:
        return np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        return None


def project_two(grads: GradientSet) -> ProjectionResult:
    """Project g_t onto the (one or two) half-space constraints.

    A missing or zero-norm constraint gradient is vacuous: it never enters
    the active set and its multiplier stays zero.  The returned u_star always
    has two entries, ordered (source, memory).
    """
    g = grads.g_t
    raw = [grads.g_s, grads.g_dm if grads.g_dm is not None
           else np.zeros_like(g)]
    live = [i for i in range(2) if np.linalg.norm(raw[i]) > 0.0]
    constraints = [raw[i] for i in live]
    eps = tolerance(g, constraints)

    best = None
    for size in range(len(live) + 1):
        for subset in itertools.combinations(range(len(live)), size):
            u_sub = _solve_subset(g, constraints, subset)
            if u_sub is None:
                continue
            u_sub = np.maximum(u_sub, 0.0)
            w = g.copy()
            for ui, idx in zip(u_sub, subset):
                w = w + ui * constraints[idx]
            slacks = np.array([c @ w for c in constraints])
            if slacks.size and slacks.min() < -eps:
                continue
            obj = 0.5 * float((w - g) @ (w - g))
            if best is None or obj < best[0] - eps * eps:
                full_u = np.zeros(2)
                for ui, idx in zip(u_sub, subset):
                    full_u[live[idx]] = ui
                case = CASE_NAMES[tuple(sorted(live[idx] for idx in subset))]
                best = (obj, w, full_u, case)

    obj, w, u_star, case = best
    diag = kkt_check(w, u_star, g, raw, eps)
    return ProjectionResult(w=w, u_star=u_star, case=case,
                            objective=obj, diagnostics=diag)


_SUBSET_LIMIT = 8


def project_n(g, constraints):
    """Projection under n half-space constraints; returns (w, u).

    Enumerates active subsets for small n, otherwise runs projected gradient
    descent on the dual (Lipschitz step from the Gram spectrum).
    """
    g = np.asarray(g, dtype=np.float64)
    C = np.asarray(constraints, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != g.shape[0]:
        raise DimensionError(f"constraint matrix has shape {C.shape}")
    n = C.shape[0]
    live = [i for i in range(n) if np.linalg.norm(C[i]) > 0.0]
    eps = tolerance(g, list(C))

    if len(live) <= _SUBSET_LIMIT:
        rows = [C[i] for i in live]
        best = None
        for size in range(len(live) + 1):
            for subset in itertools.combinations(range(len(live)), size):
                u_sub = _solve_subset_general(g, rows, subset)
                if u_sub is None:
                    continue
                u_sub = np.maximum(u_sub, 0.0)
                w = g + sum((ui * rows[idx] for ui, idx in zip(u_sub, subset)),
                            np.zeros_like(g))
                slacks = np.array([r @ w for r in rows])
                if slacks.size and slacks.min() < -eps:
                    continue
                obj = 0.5 * float((w - g) @ (w - g))
                if best is None or obj < best[0] - eps * eps:
                    full_u = np.zeros(n)
                    for ui, idx in zip(u_sub, subset):
                        full_u[live[idx]] = ui
                    best = (obj, w, full_u)
        return best[1], best[2]

    Cl = C[live]
    G = Cl @ Cl.T
    b = Cl @ g
    lam_max = float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / max(lam_max, 1e-30)
    u = np.zeros(len(live))
    for _ in range(200000):
        u_new = np.maximum(u - step * (G @ u + b), 0.0)
        if np.linalg.norm(u_new - u) <= 1e-12 * max(1.0, np.linalg.norm(u)):
            u = u_new
            break
        u = u_new
    w = g + Cl.T @ u
    full_u = np.zeros(n)
    full_u[live] = u
    return w, full_u


def _solve_subset_general(g, rows, subset):
    if not subset:
        return np.zeros(0)
    C = np.stack([rows[i] for i in subset])
    G = C @ C.T
    b = -(C @ g)
    try:
        u = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(u)) or np.linalg.norm(G @ u - b) > 1e-8 * max(
            1.0, np.linalg.norm(b)):
        return None
    return u


def brute_force_project(g, constraints):
    """Independent oracle: equality-restricted KKT block solves per subset.

    For every subset S it solves  [[I, C_S^T], [C_S, 0]] [w; lam] = [g; 0]
    and keeps the feasible candidate (all slacks >= -eps) with the smallest
    objective.  The unconstrained candidate w = g is always tried.
    """
    g = np.asarray(g, dtype=np.float64)
    C = np.asarray(constraints, dtype=np.float64)
    n, p = C.shape
    eps = tolerance(g, list(C))

    def slack_ok(w):
        return n == 0 or (C @ w).min() >= -eps

    best_obj, best_w = None, None
    if slack_ok(g):
        best_obj, best_w = 0.0, g.copy()
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(n), size):
            Cs = C[list(subset)]
            m = len(subset)
            kkt = np.zeros((p + m, p + m))
            kkt[:p, :p] = np.eye(p)
            kkt[:p, p:] = Cs.T
            kkt[p:, :p] = Cs
            rhs = np.concatenate([g, np.zeros(m)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            if np.linalg.norm(kkt @ sol - rhs) > 1e-7 * max(1.0, np.linalg.norm(rhs)):
                continue
            w = sol[:p]
            if not slack_ok(w):
                continue
            obj = 0.5 * float((w - g) @ (w - g))
            if best_obj is None or obj < best_obj:
                best_obj, best_w = obj, w
    return best_w
