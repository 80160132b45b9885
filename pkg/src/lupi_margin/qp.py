"""Convex quadratic programming over box bounds and up to two equality rows.

Every trainer in this package compiles its dual into the same shape:

    minimize    0.5 * z'Hz + q'z
    subject to  A z = c                  (A has 0, 1, or 2 rows)
                lower <= z <= upper      (upper entries may be +inf)

with H symmetric positive semidefinite.  The solver is a primal active-set
method on the bound constraints: starting from a feasible point it repeatedly
solves the equality-constrained subproblem restricted to the currently free
coordinates, steps to the nearest blocking bound, and releases bounds whose
multipliers have the wrong sign.  Subspace steps are exact linear solves, so
the method terminates at machine-precision KKT points and is bitwise
deterministic for identical inputs.

Near-singular quadratic terms (Gram matrices of low-rank feature maps) are
handled by a tiny diagonal ridge; see ``solve_qp`` for the policy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, Infeasible, MaxIterations, NotPSD

log = logging.getLogger(__name__)

RIDGE = 1e-9
EIG_REJECT = -1e-8        # smallest eigenvalue below this is rejected outright
EIG_RIDGE_TRIGGER = 1e-10  # below this the ridge is added before solving
DEFAULT_TOL = 1e-8
MAX_ITER_CAP = 1_000_000


def default_max_iter(n: int) -> int:
    return min(100 * n * n, MAX_ITER_CAP)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class QPProblem:
    """Problem data; arrays are copied and frozen on construction."""

    H: np.ndarray
    q: np.ndarray
    A: np.ndarray
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.shape[0]
        if H.shape != (n, n):
            raise DimensionMismatch(f"H has shape {H.shape}, expected ({n}, {n})")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10:
            raise ValueError("H is not symmetric within 1e-10")
        A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        if A.ndim == 1:
            A = A.reshape(1, -1)
        c = np.zeros(0) if self.c is None else np.asarray(self.c, dtype=float).ravel()
        if A.shape[0] > 2:
            raise ValueError("at most two equality rows are supported")
        if A.shape != (c.shape[0], n):
            raise DimensionMismatch(f"A has shape {A.shape}, expected ({c.shape[0]}, {n})")
        if A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]:
            raise ValueError("equality rows must be linearly independent")
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        if lower.shape != (n,) or upper.shape != (n,):
            raise DimensionMismatch("bound vectors must match the length of q")
        if not np.all(np.isfinite(lower)):
            raise ValueError("lower bounds must be finite")
        if np.any(np.isneginf(upper)) or np.any(np.isnan(upper)):
            raise ValueError("upper bounds must be finite or +inf")
        if np.any(lower > upper):
            raise ValueError("found lower > upper")
        object.__setattr__(self, "H", _readonly(H))
        object.__setattr__(self, "q", _readonly(q))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "c", _readonly(c))
        object.__setattr__(self, "lower", _readonly(lower))
        object.__setattr__(self, "upper", _readonly(upper))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DualSolution:
    """Solver output.  ``objective`` is 0.5*z'Hz + q'z for the problem's own H;
    ``objective_trace`` tracks the internal (possibly ridged) objective and is
    non-increasing across iterations.  ``ridge`` reports the diagonal added."""

    z: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str  # "converged" | "max_iterations" | "infeasible"
    objective_trace: tuple[float, ...] = field(default=(), repr=False)
    ridge: float = 0.0


def _kkt_terms(H, q, A, c, lower, upper, z):
    """(stationarity, equality, bound) residual components at z.

    Every component is relative to its natural scale: stationarity to the
    gradient magnitude, equality to the constraint right-hand side and
    iterate size, bounds to the iterate size.  An absolute gradient-unit
    measure would be unattainable for well-solved problems whose objective
    sits at 1e7, where float64 cannot even represent the improvements an
    absolute tolerance asks for.
    """
    g = H @ z + q
    gscale = 1.0 + float(np.max(np.abs(g), initial=0.0))
    zscale = 1.0 + float(np.max(np.abs(z), initial=0.0))
    scale = np.maximum(1.0, np.abs(lower))
    finite_up = np.isfinite(upper)
    scale[finite_up] = np.maximum(scale[finite_up], np.abs(upper[finite_up]))
    atol = 1e-8 * scale
    at_lower = z - lower <= atol
    at_upper = finite_up & (upper - z <= atol)
    free = ~(at_lower | at_upper)
    lower_only = at_lower & ~at_upper
    upper_only = at_upper & ~at_lower
    fixed = at_lower & at_upper

    def _violation(gbar):
        r = gbar.copy()
        r[lower_only] = np.minimum(0.0, gbar[lower_only])
        r[upper_only] = np.maximum(0.0, gbar[upper_only])
        r[fixed] = 0.0
        return float(np.max(np.abs(r), initial=0.0))

    stop = 1e-12 * gscale
    if A.shape[0]:
        # the equality multipliers certifying z are not unique when the
        # active classification is degenerate, so keep the best certificate
        # over several candidate fits
        cols = free if free.any() else np.ones(z.shape[0], dtype=bool)
        nu, *_ = np.linalg.lstsq(A[:, cols].T, g[cols], rcond=None)
        stationarity = _violation(g - A.T @ nu)
        nu_all, *_ = np.linalg.lstsq(A.T, g, rcond=None)
        stationarity = min(stationarity, _violation(g - A.T @ nu_all))
        # a coordinate parked just inside the activity band is hinged
        # above, but its column still carries stationarity information; a
        # candidate fitted on the wider classification catches optima the
        # narrow fit misreads
        wtol = 1e-12 * zscale
        wide = ~((z - lower <= wtol) | (finite_up & (upper - z <= wtol)))
        if wide.any() and not np.array_equal(wide, cols):
            nu_wide, *_ = np.linalg.lstsq(A[:, wide].T, g[wide], rcond=None)
            stationarity = min(stationarity, _violation(g - A.T @ nu_wide))
        if stationarity > stop and A.shape[0] == 1:
            a = A[0]
            nz = np.abs(a) > 0
            for v in np.unique(g[nz] / a[nz]):
                stationarity = min(stationarity, _violation(g - a * v))
                if stationarity <= stop:
                    break
        elif stationarity > stop and A.shape[0] == 2:
            best = nu if _violation(g - A.T @ nu) <= _violation(g - A.T @ nu_all) else nu_all
            best = best.copy()
            for _ in range(3):
                for j in (0, 1):
                    a = A[j]
                    base = g - A.T @ best + a * best[j]
                    nz = np.abs(a) > 0
                    if not nz.any():
                        continue
                    trial = best.copy()
                    for v in np.unique(base[nz] / a[nz]):
                        trial[j] = v
                        cand = _violation(g - A.T @ trial)
                        if cand < stationarity:
                            stationarity = cand
                            best[j] = v
    else:
        stationarity = _violation(g)
    if A.shape[0]:
        cscale = 1.0 + float(np.max(np.abs(c), initial=0.0)) + zscale
        equality = float(np.max(np.abs(A @ z - c), initial=0.0)) / cscale
    else:
        equality = 0.0
    bound = float(
        max(
            np.max(lower - z, initial=0.0),
            np.max((z - upper)[finite_up], initial=0.0),
        )
    ) / zscale
    return stationarity / gscale, equality, bound


def kkt_residual(problem: QPProblem, z) -> float:
    """Max of the projected-gradient, equality, and bound violations at z.

    Each term is relative to its own scale (gradient, right-hand side,
    iterate), so the value is comparable across problems regardless of
    their magnitude.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.shape != (problem.n,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({problem.n},)")
    return float(max(_kkt_terms(problem.H, problem.q, problem.A, problem.c,
                                problem.lower, problem.upper, z)))


def _equality_basis(Af):
    """Orthonormal basis of the equality rows, tolerant of rank collapse.

    A row can vanish on the free block (the label row restricted to the
    slack half of a stacked dual), so the basis is built row by row.
    """
    basis = []
    if Af is not None:
        for row in Af:
            w = np.array(row, dtype=float)
            norm_in = np.linalg.norm(w)
            for u in basis:
                w = w - (u @ w) * u
            if np.linalg.norm(w) > 1e-12 * (1.0 + norm_in):
                basis.append(w / np.linalg.norm(w))
    return basis


def _subspace_descent(Hff, gf, Af, mode="newton"):
    """Equality-feasible descent direction on the free subspace.

    mode "newton": split the projected gradient into curved and flat
    eigenmodes of the projected Hessian; flat components give a linear
    descent ray, curved ones a Newton step.  Robust where a direct solve
    would amplify ridge-level eigenvalues into noise.

    mode "steepest": the projected negative gradient.  Used when the
    Newton direction is blocked at a zero step by a freshly released
    bound; steepest descent always moves a wrong-multiplier coordinate
    into the interior.

    Returns None when the subspace is stationary.
    """
    basis = _equality_basis(Af)
    gP = np.array(gf, dtype=float)
    for u in basis:
        gP = gP - (u @ gP) * u
    scale = 1.0 + float(np.max(np.abs(gP), initial=0.0))
    if mode == "steepest":
        if float(np.max(np.abs(gP), initial=0.0)) <= 1e-13 * scale:
            return None
        return -gP
    H_use = Hff
    if basis:
        M = np.array(basis)
        HM = Hff @ M.T
        H_use = Hff - M.T @ (M @ Hff) - HM @ M + M.T @ (M @ HM) @ M
        H_use = 0.5 * (H_use + H_use.T)
    lam, V = np.linalg.eigh(H_use)
    cut = max(10.0 * RIDGE, 1e-10 * float(lam[-1]))
    coef = V.T @ gP
    flat = lam <= cut
    d = None
    if flat.any():
        g_flat = V[:, flat] @ coef[flat]
        if float(np.max(np.abs(g_flat), initial=0.0)) > 1e-11 * scale:
            d = -g_flat
    if d is None:
        curved = ~flat
        if curved.any():
            d = -(V[:, curved] @ (coef[curved] / lam[curved]))
            if float(np.max(np.abs(d), initial=0.0)) == 0.0:
                d = None
    if d is not None:
        # re-project twice: flat rays can be stepped very far, so residual
        # constraint components must sit at the square of roundoff
        for _ in range(2):
            for u in basis:
                d = d - (u @ d) * u
    return d


def _best_point(Hs, q, A, c, lower, upper, z, z_best, res_best):
    """Pick the better of the final iterate and the best snapshot.

    Polishing steps taken after the last certificate check can leave the
    final iterate slightly worse than a point already visited.
    """
    res = float(max(_kkt_terms(Hs, q, A, c, lower, upper, z)))
    if z_best is not None and res_best < res:
        return z_best, res_best
    return z, res


def _blocking_step(z, p, lower, upper, finite_up, t_max, tol, excur):
    """Longest step along p from z that stays inside the box, capped at t_max.

    Returns (t, blocker, to_upper); blocker is -1 when t_max itself is
    feasible, otherwise the index of the bound hit first.

    Components with |p| <= tol are exempted from the ratio test so that
    round-off noise in a direction cannot force a zero step off an active
    bound.  An exempt component may still travel far when the step is
    long; any that would overshoot its bound by more than excur re-enters
    the test, because clipping a material overshoot afterwards silently
    breaks the equality constraints.
    """
    move = np.abs(p) > tol
    t = 0.0
    blocker = -1
    to_upper = False
    for _ in range(z.shape[0] + 1):
        t = t_max
        blocker = -1
        to_upper = False
        up_mask = move & (p > 0) & finite_up
        if up_mask.any():
            ratios = (upper[up_mask] - z[up_mask]) / p[up_mask]
            k = int(np.argmin(ratios))
            if ratios[k] < t:
                t = float(ratios[k])
                blocker = int(np.flatnonzero(up_mask)[k])
                to_upper = True
        down_mask = move & (p < 0)
        if down_mask.any():
            ratios = (lower[down_mask] - z[down_mask]) / p[down_mask]
            k = int(np.argmin(ratios))
            if ratios[k] < t:
                t = float(ratios[k])
                blocker = int(np.flatnonzero(down_mask)[k])
                to_upper = False
        t = max(t, 0.0)
        rest = ~move & (p != 0)
        if not rest.any():
            break
        with np.errstate(invalid="ignore"):
            excess = np.where(
                rest & (p < 0), t * (-p) - (z - lower),
                np.where(rest & (p > 0) & finite_up,
                         t * p - (upper - z), -np.inf))
        bad = excess > excur
        if not bad.any():
            break
        move |= bad
    return t, blocker, to_upper


def _row_range(a, lower, upper):
    """Attainable range of a'z over the box (entries may be +-inf)."""
    pos = a > 0
    neg = a < 0
    lo = np.sum(a[pos] * lower[pos]) + np.sum(a[neg] * upper[neg])
    hi = np.sum(a[pos] * upper[pos]) + np.sum(a[neg] * lower[neg])
    return lo, hi


def _solve_hyperplane(z_ref, a, target, lower, upper):
    """Exact nu with a' clip(z_ref + nu*a, lower, upper) = target.

    The map is piecewise linear and nondecreasing in nu; breakpoints are
    scanned directly so the result is exact up to round-off.  Raises
    Infeasible when the target is outside the attainable range.
    """
    lo, hi = _row_range(a, lower, upper)
    tol = 1e-9 * (1.0 + abs(target))
    if target < lo - tol or target > hi + tol:
        raise Infeasible(f"equality target {target} outside attainable range [{lo}, {hi}]")

    def phi(nu):
        return float(a @ np.clip(z_ref + nu * a, lower, upper))

    nz = a != 0
    bps = []
    an = a[nz]
    zn = z_ref[nz]
    bps.append((lower[nz] - zn) / an)
    fin = np.isfinite(upper) & nz
    if fin.any():
        bps.append((upper[fin] - z_ref[fin]) / a[fin])
    bps = np.unique(np.concatenate(bps)) if bps else np.array([0.0])
    if bps.size == 0:
        bps = np.array([0.0])
    vals = np.array([phi(b) for b in bps])

    def slope_at(nu):
        zz = z_ref + nu * a
        interior = nz & (zz > lower) & ((~np.isfinite(upper)) | (zz < upper))
        return float(np.sum(a[interior] ** 2))

    if target <= vals[0]:
        width = max(1.0, float(np.max(np.abs(bps))))
        s = slope_at(bps[0] - 1e-3 * width)
        if s <= 0.0:
            return float(bps[0])
        return float(bps[0] + (target - vals[0]) / s)
    if target >= vals[-1]:
        width = max(1.0, float(np.max(np.abs(bps))))
        s = slope_at(bps[-1] + 1e-3 * width)
        if s <= 0.0:
            return float(bps[-1])
        return float(bps[-1] + (target - vals[-1]) / s)
    k = int(np.searchsorted(vals, target, side="left"))
    left, right = bps[k - 1], bps[k]
    s = slope_at(0.5 * (left + right))
    if s <= 0.0:
        return float(left)
    return float(left + (target - vals[k - 1]) / s)


def _project_feasible(z_ref, A, c, lower, upper):
    """A feasible point of {Az = c} intersected with the box, near z_ref."""
    z0 = np.clip(z_ref, lower, upper)
    m = A.shape[0]
    if m == 0:
        return z0
    for k in range(m):
        lo, hi = _row_range(A[k], lower, upper)
        tol = 1e-9 * (1.0 + abs(c[k]))
        if c[k] < lo - tol or c[k] > hi + tol:
            raise Infeasible(f"equality row {k} unreachable within bounds")
    if m == 1:
        nu = _solve_hyperplane(z0, A[0], c[0], lower, upper)
        return np.clip(z0 + nu * A[0], lower, upper)

    a1, a2 = A[0], A[1]

    def residual2(nu2):
        shifted = z0 + nu2 * a2
        nu1 = _solve_hyperplane(shifted, a1, c[0], lower, upper)
        z = np.clip(shifted + nu1 * a1, lower, upper)
        return float(a2 @ z - c[1]), z

    span = 1.0 + float(np.max(np.abs(z0), initial=0.0))
    lo_nu, hi_nu = -span, span
    f_lo, _ = residual2(lo_nu)
    f_hi, _ = residual2(hi_nu)
    # residual2 is nondecreasing in nu2; expand until the root is bracketed
    for _ in range(80):
        if f_lo <= 0.0 <= f_hi:
            break
        if f_lo > 0.0:
            lo_nu *= 2.0
            f_lo, _ = residual2(lo_nu)
        if f_hi < 0.0:
            hi_nu *= 2.0
            f_hi, _ = residual2(hi_nu)
        if abs(lo_nu) > 1e18 or abs(hi_nu) > 1e18:
            break
    if not (f_lo <= 0.0 <= f_hi):
        raise Infeasible("equality rows jointly unreachable within bounds")
    z_best = None
    for _ in range(200):
        mid = 0.5 * (lo_nu + hi_nu)
        f_mid, z_mid = residual2(mid)
        z_best = z_mid
        if f_mid < 0.0:
            lo_nu = mid
        else:
            hi_nu = mid
        if hi_nu - lo_nu <= 1e-16 * max(1.0, abs(mid)):
            break
    return z_best


def _objective(H, q, z):
    return float(0.5 * (z @ (H @ z)) + q @ z)


def solve_qp(
    problem: QPProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    *,
    hessian_check: str = "spectral",
    start=None,
) -> DualSolution:
    """Minimize the problem to a KKT residual of at most ``tol``.

    The residual is the scale-relative measure of ``kkt_residual``, so the
    same tolerance works for problems at any magnitude.

    hessian_check:
        "spectral"  -- compute the smallest eigenvalue of H; reject below
                       -1e-8 (NotPSD), add a 1e-9 ridge when it falls below
                       1e-10.  This is the default contract behaviour.
        "trusted"   -- skip the eigenvalue pass and always add the 1e-9
                       ridge.  Intended for callers that assembled H from
                       symmetrized Gram matrices and already know it is PSD.

    ``start`` optionally supplies a warm start; it is projected onto the
    feasible set if it does not already satisfy the constraints.

    Raises Infeasible, NotPSD, or MaxIterations (best iterate attached).
    """
    n = problem.n
    if max_iter is None:
        max_iter = default_max_iter(n)
    H, q = problem.H, problem.q
    A, c = problem.A, problem.c
    lower, upper = problem.lower, problem.upper

    ridge = 0.0
    if hessian_check == "spectral":
        lam_min = float(np.linalg.eigvalsh(H)[0]) if n else 0.0
        if lam_min < EIG_REJECT:
            raise NotPSD(f"smallest eigenvalue {lam_min:.3e} is below {EIG_REJECT:.0e}")
        if lam_min < EIG_RIDGE_TRIGGER:
            ridge = RIDGE
            log.debug("adding ridge %.0e (smallest eigenvalue %.3e)", RIDGE, lam_min)
    elif hessian_check == "trusted":
        ridge = RIDGE
    else:
        raise ValueError(f"unknown hessian_check {hessian_check!r}")
    Hs = H + ridge * np.eye(n) if ridge else H

    if start is not None:
        z = np.clip(np.asarray(start, dtype=float).ravel(), lower, upper)
        if z.shape != (n,):
            raise DimensionMismatch("start vector has the wrong length")
        if problem.m and np.max(np.abs(A @ z - c), initial=0.0) > 1e-12 * (1.0 + np.max(np.abs(c), initial=0.0)):
            z = _project_feasible(z, A, c, lower, upper)
    else:
        z = _project_feasible(np.zeros(n), A, c, lower, upper)

    m = problem.m
    scale_z = 1.0 + float(np.max(np.abs(z), initial=0.0))
    at_low = z - lower <= 1e-14 * scale_z
    at_up = np.isfinite(upper) & (upper - z <= 1e-14 * scale_z)
    w_low = at_low.copy()
    w_up = (at_up & ~at_low).copy()

    trace = [_objective(Hs, q, z)]
    iters = 0
    finite_up = np.isfinite(upper)
    drift_cap = 1e-10 * (1.0 + float(np.max(np.abs(c), initial=0.0)))
    polish = 0
    polish_budget = min(10 * n, 1000)
    polish_bad = 0
    polishing = False
    cert_best = np.inf
    res_best = np.inf
    z_best = None
    # set after a drop: the enlarged subspace is exactly where the plain
    # KKT solve goes singular, so route the next direction through the
    # eigenvalue-aware path
    robust_next = False
    # consecutive subspace steps whose only effect was displacement; capped
    # so cosmetic progress cannot starve the multiplier test forever
    quiet = 0

    for iters in range(1, max_iter + 1):
        scale_z = 1.0 + float(np.max(np.abs(z), initial=0.0))
        g = Hs @ z + q
        free = ~(w_low | w_up)
        f = int(np.count_nonzero(free))
        p = np.zeros(n)
        if f and not robust_next and not polishing:
            Hff = Hs[np.ix_(free, free)]
            if m:
                Af = A[:, free]
                K = np.zeros((f + m, f + m))
                K[:f, :f] = Hff
                K[:f, f:] = Af.T
                K[f:, :f] = Af
                rhs = np.concatenate([-g[free], np.zeros(m)])
                try:
                    sol = np.linalg.solve(K, rhs)
                    if not np.all(np.isfinite(sol)):
                        raise np.linalg.LinAlgError
                except np.linalg.LinAlgError:
                    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
                p[free] = sol[:f]
            else:
                try:
                    pf = np.linalg.solve(Hff, -g[free])
                    if not np.all(np.isfinite(pf)):
                        raise np.linalg.LinAlgError
                except np.linalg.LinAlgError:
                    pf, *_ = np.linalg.lstsq(Hff, -g[free], rcond=None)
                p[free] = pf

        step_tol = 1e-12 * scale_z
        flat_tol = 1e-13 * (1.0 + abs(trace[-1]))
        pmax = float(np.max(np.abs(p), initial=0.0))
        need_test = robust_next or polishing or pmax <= step_tol
        robust_next = False
        # this iteration's objective change, tracked analytically: comparing
        # _objective evaluations instead would drown real progress in the
        # cancellation noise of the quadratic form
        dobj = 0.0
        slope = float(g @ p)
        if not need_test and slope >= 0.0:
            # an exact subspace solve always yields a descent direction;
            # a non-negative slope marks the solution as numerical junk
            need_test = True
        if not need_test:
            curv = float(p @ (Hs @ p))
            t_max = min(1.0, -slope / curv) if curv > 0 else 1.0
            t, blocker, to_upper = _blocking_step(
                z, p, lower, upper, finite_up, t_max, step_tol,
                1e-14 * scale_z)
            dpred = t * slope + 0.5 * t * t * curv
            drift = (t * float(np.max(np.abs(A @ p), initial=0.0))
                     if m else 0.0)
            if drift > drift_cap:
                # a least-squares fallback on a singular subspace can return
                # a direction that leaves the equality manifold; stepping on
                # it would corrupt feasibility for good
                need_test = True
            elif dpred <= 0.0:
                z_new = z + t * p
                np.clip(z_new, lower, upper, out=z_new)
                if blocker >= 0:
                    z_new[blocker] = (upper[blocker] if to_upper
                                      else lower[blocker])
                z = z_new
                dobj = dpred
                if blocker >= 0:
                    if to_upper:
                        w_up[blocker] = True
                    else:
                        w_low[blocker] = True
                elif -dpred <= flat_tol:
                    # a full step that changed nothing: the subspace is flat
                    # here, so fall through and examine the point
                    need_test = True
            else:
                # ill-conditioned solve produced a non-descent step; do not
                # move on it
                need_test = True
        if need_test:
            # measure the point the way the final certificate will; done
            # whenever it already meets the tolerance
            cert_now = float(max(_kkt_terms(Hs, q, A, c, lower, upper, z)))
            if cert_now < res_best:
                res_best = cert_now
                z_best = z.copy()
            if cert_now <= tol:
                trace.append(trace[-1] + dobj)
                break
            # releasing bounds is only sound once the free subspace is
            # exhausted, so retry it with the conditioning-robust direction
            # before touching the working set
            moved = False
            if f:
                # gradient projection on the free subspace: try the Newton
                # direction, fall back to projected steepest descent when a
                # freshly released bound blocks it at a zero step, and
                # shrink past right-sign coordinates resting on bounds
                sub = free.copy()
                for _attempt in range(n + 2):
                    if not sub.any():
                        break
                    stepped = False
                    zero_blocked = None
                    for mode in ("newton", "steepest"):
                        d_f = _subspace_descent(Hs[np.ix_(sub, sub)], g[sub],
                                                A[:, sub] if m else None,
                                                mode)
                        if d_f is None:
                            continue
                        d = np.zeros(n)
                        d[sub] = d_f
                        slope = float(g @ d)
                        if slope >= 0:
                            continue
                        curv = float(d @ (Hs @ d))
                        t_star = -slope / curv if curv > 0 else np.inf
                        t, blocker, to_upper = _blocking_step(
                            z, d, lower, upper, finite_up, t_star, step_tol,
                            1e-14 * scale_z)
                        if np.isfinite(t) and t > 0:
                            dpred = t * slope + 0.5 * t * t * curv
                            if dpred > 0.0:
                                # cannot happen for a clean direction with
                                # t <= t_star; arbitrate via multipliers
                                break
                            if m and t * float(np.max(np.abs(A @ d),
                                               initial=0.0)) > drift_cap:
                                continue
                            z_new = z + t * d
                            np.clip(z_new, lower, upper, out=z_new)
                            if blocker >= 0:
                                z_new[blocker] = (upper[blocker] if to_upper
                                                 else lower[blocker])
                            disp = float(np.max(np.abs(z_new - z),
                                                initial=0.0))
                            z = z_new
                            dobj = dpred
                            if blocker >= 0:
                                if to_upper:
                                    w_up[blocker] = True
                                else:
                                    w_low[blocker] = True
                            # progress too small to matter still counts as a
                            # step, but only a few times in a row: cosmetic
                            # creep must not starve the multiplier test
                            visible = blocker >= 0 or -dpred > flat_tol
                            if visible:
                                quiet = 0
                                polish = 0
                                polishing = False
                                moved = True
                            elif disp > step_tol and quiet < 3:
                                quiet += 1
                                moved = True
                            stepped = True
                            break
                        zero_blocked = d
                    if stepped or zero_blocked is None:
                        break
                    d = zero_blocked
                    off = sub & (
                        ((d < 0) & (z - lower <= 1e-14 * scale_z))
                        | ((d > 0) & finite_up
                           & (upper - z <= 1e-14 * scale_z)))
                    if not off.any():
                        break
                    sub = sub & ~off
            if not moved:
                # refit the multipliers the way kkt_residual does, so the
                # drop decisions agree with the reported certificate
                if m:
                    cols = free if f else np.ones(n, dtype=bool)
                    nu_ls, *_ = np.linalg.lstsq(A[:, cols].T, g[cols], rcond=None)
                    gbar = g - A.T @ nu_ls
                else:
                    gbar = g
                drop_tol = 1e-10 * (1.0 + float(np.max(np.abs(gbar), initial=0.0)))
                # free coordinates resting on a bound with a correct-sign
                # multiplier belong in the working set; pin them rather than
                # stepping into an immediate block
                pin_lo = free & (gbar > 0) & (z - lower <= 1e-14 * scale_z)
                pin_hi = (free & (gbar < 0) & finite_up
                          & (upper - z <= 1e-14 * scale_z))
                if pin_lo.any() or pin_hi.any():
                    w_low |= pin_lo
                    w_up |= pin_hi
                    quiet = 0
                    polish = 0
                    polishing = False
                    trace.append(trace[-1] + dobj)
                    continue
                viol = np.zeros(n)
                viol[w_low] = -np.minimum(0.0, gbar[w_low])
                viol[w_up] = np.maximum(0.0, gbar[w_up])
                # drop every violating bound at once: equality rows can pin
                # any single freed coordinate, which would cycle forever
                mask = viol > drop_tol
                if not mask.any():
                    improved = cert_now < cert_best * (1.0 - 1e-3)
                    if polish < polish_budget and (improved
                                                   or polish_bad < 4):
                        # every multiplier has the right sign, yet the
                        # certificate above still failed: the remaining
                        # error is too small to show in the objective or
                        # displacement, so keep polishing while the
                        # certificate trends down.  Descent zig-zag makes
                        # the certificate oscillate, hence the grace
                        # rounds between ratchet improvements.
                        polish += 1
                        polish_bad = 0 if improved else polish_bad + 1
                        cert_best = min(cert_best, cert_now)
                        quiet = 0
                        # the fast solve is junk in this regime and would
                        # undo each correction, so polish on the robust
                        # path alone until something visible happens
                        polishing = True
                        trace.append(trace[-1] + dobj)
                        continue
                    # subspace exhausted and every multiplier has the right
                    # sign; nothing numerical remains to be done
                    trace.append(trace[-1] + dobj)
                    break
                w_low[mask] = False
                w_up[mask] = False
                robust_next = True
                quiet = 0
                polish = 0
                polishing = False
        trace.append(trace[-1] + dobj)
    else:
        z, res = _best_point(Hs, q, A, c, lower, upper, z, z_best, res_best)
        best = DualSolution(
            z=_readonly(z),
            objective=_objective(H, q, z),
            kkt_residual=res,
            iterations=iters,
            status="max_iterations",
            objective_trace=tuple(trace),
            ridge=ridge,
        )
        raise MaxIterations(
            f"no convergence within {max_iter} iterations (residual {res:.3e})",
            solution=best,
        )

    z, res = _best_point(Hs, q, A, c, lower, upper, z, z_best, res_best)
    status = "converged" if res <= tol else "max_iterations"
    solution = DualSolution(
        z=_readonly(z),
        objective=_objective(H, q, z),
        kkt_residual=res,
        iterations=iters,
        status=status,
        objective_trace=tuple(trace),
        ridge=ridge,
    )
    if status != "converged":
        raise MaxIterations(
            f"active-set loop stalled at residual {res:.3e} (tol {tol:.1e})",
            solution=solution,
        )
    return solution
