"""Least squares over the probability simplex.

Solves, for a set of 2-D rows (target y, candidates x_1..x_C),

    minimize   sum_r || y_r - sum_c w_c x_rc ||^2
    subject to w >= 0,  sum(w) = 1.

The workhorse is a primal active-set method: starting from the uniform
vector with every coordinate in the working support, it alternates exact
equality-constrained solves on the support with feasibility line searches
that drop blocking coordinates, and grows the support where the reduced
gradient is negative.  On these tiny dense QPs (C is the pool size,
typically <= 20) it terminates in a few support changes with a
machine-precision optimum.  Rows the active set cannot finish (singular
subproblems, cycling) fall back to projected gradient with Barzilai-Borwein
steps.

`oracle_solve` is an independent brute-force check: it enumerates every
simplex grid point with coordinates that are multiples of a grid step and
returns the best.  It exists so the solver can be validated against
something that cannot share its bugs.
"""

from dataclasses import dataclass

import numpy as np

_SUPPORT_EPS = 1e-10


@dataclass
class SimplexProblem:
    """Stacked rows of one constrained least-squares instance.

    targets: (R, 2) landmark coordinates to reproduce.
    candidates: (R, C, 2) the C pool models' coordinates for each row.
    """

    targets: np.ndarray
    candidates: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.candidates = np.asarray(self.candidates, dtype=np.float64)
        if self.targets.ndim != 2 or self.targets.shape[1] != 2:
            raise ValueError("targets must have shape (R, 2)")
        if self.targets.shape[0] < 1:
            raise ValueError("problem needs at least one row")
        R = self.targets.shape[0]
        if (
            self.candidates.ndim != 3
            or self.candidates.shape[0] != R
            or self.candidates.shape[2] != 2
        ):
            raise ValueError("candidates must have shape (R, C, 2)")
        if self.candidates.shape[1] < 1:
            raise ValueError("problem needs at least one candidate model")
        if not np.all(np.isfinite(self.targets)) or not np.all(
            np.isfinite(self.candidates)
        ):
            raise ValueError("problem contains non-finite values")

    @property
    def model_count(self) -> int:
        return self.candidates.shape[1]

    def objective(self, w) -> float:
        """Sum of squared residuals of weights `w` on this problem."""
        w = np.asarray(w, dtype=np.float64)
        blend = np.einsum("rcd,c->rd", self.candidates, w)
        resid = self.targets - blend
        return float(np.einsum("rd,rd->", resid, resid))

    def gram(self):
        """(G, h, const) with objective(w) = w'Gw - 2h'w + const."""
        G = np.einsum("rcd,red->ce", self.candidates, self.candidates)
        h = np.einsum("rcd,rd->c", self.candidates, self.targets)
        const = float(np.einsum("rd,rd->", self.targets, self.targets))
        return G, h, const


@dataclass
class SimplexSolution:
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of v onto {w >= 0, sum(w) = 1}.

    Sort-based O(C log C) algorithm; exact up to float arithmetic (components
    outside the support come out exactly 0).
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    K, C = v.shape
    u = np.sort(v, axis=1)[:, ::-1]
    cssv = np.cumsum(u, axis=1) - 1.0
    denom = np.arange(1, C + 1)
    cond = u * denom > cssv
    rho = C - 1 - np.argmax(cond[:, ::-1], axis=1)  # last index where cond holds
    theta = cssv[np.arange(K), rho] / (rho + 1.0)
    return np.clip(v - theta[:, None], 0.0, None)


def _kkt_residual(w, grad):
    """Per-row KKT violation for min f(w) on the simplex; 0 at an optimum."""
    supp = w > 1e-12
    lam = np.einsum("ki,ki->k", grad, w)
    on = np.where(supp, np.abs(grad - lam[:, None]), 0.0).max(axis=1)
    off = np.where(~supp, np.maximum(lam[:, None] - grad, 0.0), 0.0).max(axis=1)
    scale = 1.0 + np.abs(grad).max(axis=1)
    return np.maximum(on, off), scale


def _eqp_solve(G, h, supp):
    """Minimize w'Gw - 2h'w s.t. sum(w[supp]) = 1, w[~supp] = 0, per row.

    Returns (w, nu, ok) where nu is the equality multiplier (the gradient on
    the support equals -nu at the solution) and ok flags rows whose linear
    system was solvable.
    """
    K, C = h.shape
    A = np.zeros((K, C + 1, C + 1))
    rhs = np.zeros((K, C + 1))
    A[:, :C, :C] = 2.0 * G
    A[:, :C, C] = supp
    A[:, C, :C] = supp
    rhs[:, :C] = np.where(supp, 2.0 * h, 0.0)
    rhs[:, C] = 1.0
    k_idx, i_idx = np.nonzero(~supp)
    A[k_idx, i_idx, :] = 0.0
    A[k_idx, i_idx, i_idx] = 1.0
    ok = np.ones(K, dtype=bool)
    try:
        sol = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
        bad = ~np.isfinite(sol).all(axis=1)
        ok[bad] = False
    except np.linalg.LinAlgError:
        sol = np.zeros((K, C + 1))
        for k in range(K):
            try:
                sol[k] = np.linalg.solve(A[k], rhs[k][:, None])[:, 0]
                if not np.isfinite(sol[k]).all():
                    ok[k] = False
            except np.linalg.LinAlgError:
                ok[k] = False
    return sol[:, :C], sol[:, C], ok


def _active_set_batch(G, h, tolerance):
    """Primal active-set pass over a batch; rows it cannot certify are
    flagged for the gradient fallback.

    Returns (w, rounds, solved).  Every row's trajectory depends only on its
    own (G, h), so results are independent of batch composition.
    """
    K, C = h.shape
    w = np.full((K, C), 1.0 / C)
    supp = np.ones((K, C), dtype=bool)
    rounds = np.zeros(K, dtype=np.int64)
    solved = np.zeros(K, dtype=bool)
    failed = np.zeros(K, dtype=bool)
    max_rounds = 4 * C + 12

    active = np.arange(K)
    for _ in range(max_rounds):
        if active.size == 0:
            break
        Ga, ha = G[active], h[active]
        wa, sa = w[active], supp[active]
        w_eq, nu, ok = _eqp_solve(Ga, ha, sa)
        rounds[active] += 1
        if not ok.all():
            failed[active[~ok]] = True
        feas = w_eq.min(axis=1) >= -1e-12

        go = ok & feas
        if go.any():
            rows = active[go]
            w_new = np.clip(w_eq[go], 0.0, None)
            w[rows] = w_new
            grad = 2.0 * (np.einsum("kij,kj->ki", G[rows], w_new) - h[rows])
            reduced = grad + nu[go][:, None]
            reduced = np.where(supp[rows], np.inf, reduced)
            worst = reduced.min(axis=1)
            scale = 1.0 + np.abs(grad).max(axis=1)
            optimal = worst >= -tolerance * scale
            solved[rows[optimal]] = True
            grow = rows[~optimal]
            if grow.size:
                j = np.argmin(reduced[~optimal], axis=1)
                supp[grow, j] = True

        shrink = ok & ~feas
        if shrink.any():
            rows = active[shrink]
            we, wc = w_eq[shrink], w[rows]
            d = we - wc
            blocking = (d < 0) & supp[rows]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(blocking, wc / -d, np.inf)
            j = np.argmin(ratio, axis=1)
            alpha = ratio[np.arange(rows.size), j]
            w_new = np.clip(wc + alpha[:, None] * d, 0.0, None)
            w_new[np.arange(rows.size), j] = 0.0
            w[rows] = w_new
            supp[rows, j] = False

        active = np.nonzero(~solved & ~failed)[0]

    return w, rounds, solved


def _polish_on_support(G, h, w, f):
    """Exact equality-constrained solve on each row's detected support.

    Pins off-support coordinates to zero and solves the KKT system for the
    rest.  Rows where the system is singular or the result infeasible keep
    their iterate.  Returns possibly-improved (w, f).
    """
    supp = w > _SUPPORT_EPS
    sol, _, ok = _eqp_solve(G, h, supp)
    feasible = ok & (sol.min(axis=1) >= -1e-9) & np.isfinite(sol).all(axis=1)
    sol = np.clip(sol, 0.0, None)
    Gs = np.einsum("kij,kj->ki", G, sol)
    f_sol = np.einsum("ki,ki->k", sol, Gs) - 2.0 * np.einsum("ki,ki->k", h, sol)
    accept = feasible & (f_sol <= f + 1e-12 * (1.0 + np.abs(f)))
    return np.where(accept[:, None], sol, w), np.where(accept, f_sol, f)


def _pgd_batch(G, h, tolerance, max_iterations):
    """Projected gradient with BB steps; the fallback path.

    Guaranteed to return a feasible iterate; used for rows whose active-set
    subproblems were singular or cycled.
    """
    K, C = h.shape

    def quad(wv):
        Gw = np.einsum("kij,kj->ki", G, wv)
        return np.einsum("ki,ki->k", wv, Gw) - 2.0 * np.einsum("ki,ki->k", h, wv), Gw

    trace = np.einsum("kii->k", G)
    base_step = 1.0 / np.maximum(2.0 * trace, 1e-30)

    w = np.full((K, C), 1.0 / C)
    f, Gw = quad(w)
    grad = 2.0 * (Gw - h)
    resid, scale = _kkt_residual(w, grad)
    converged = resid <= tolerance * scale
    iterations = np.zeros(K, dtype=np.int64)

    prev_w = None
    prev_grad = None
    for it in range(1, max_iterations + 1):
        if converged.all():
            break
        if prev_w is None:
            alpha = base_step
        else:
            dw = w - prev_w
            dg = grad - prev_grad
            num = np.einsum("ki,ki->k", dw, dw)
            den = np.einsum("ki,ki->k", dw, dg)
            alpha = np.where(den > 1e-30, num / np.maximum(den, 1e-30), base_step)
            alpha = np.clip(alpha, 1e-12, 1e12)
        w_try = project_to_simplex(w - alpha[:, None] * grad)
        f_try, Gw_try = quad(w_try)
        # nonmonotone BB steps are fine, but guard against divergence: fall
        # back to the guaranteed-descent short step when the objective jumps
        bad = f_try > f + 1e-12 * (1.0 + np.abs(f))
        if bad.any():
            w_base = project_to_simplex(w - base_step[:, None] * grad)
            f_base, Gw_base = quad(w_base)
            w_try = np.where(bad[:, None], w_base, w_try)
            f_try = np.where(bad, f_base, f_try)
            Gw_try = np.where(bad[:, None], Gw_base, Gw_try)
        grad_try = 2.0 * (Gw_try - h)
        live = ~converged
        prev_w = np.where(live[:, None], w, prev_w if prev_w is not None else w)
        prev_grad = np.where(
            live[:, None], grad, prev_grad if prev_grad is not None else grad
        )
        w = np.where(live[:, None], w_try, w)
        f = np.where(live, f_try, f)
        grad = np.where(live[:, None], grad_try, grad)
        iterations[live] = it
        resid, scale = _kkt_residual(w, grad)
        converged = converged | (resid <= tolerance * scale)

    w, f = _polish_on_support(G, h, w, f)
    return w, iterations


def solve_gram_batch(G, h, tolerance=1e-8, max_iterations=1000):
    """Solve K simplex least-squares problems given their Gram forms.

    G: (K, C, C), h: (K, C).  Returns (w, iterations, converged) where each
    row of w is a simplex vector.  Every row's result depends only on its
    own data, so batching K problems matches K separate solves bit for bit.
    """
    G = np.asarray(G, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    K, C = h.shape
    if C == 1:
        return np.ones((K, 1)), np.zeros(K, dtype=np.int64), np.ones(K, dtype=bool)

    w, iterations, solved = _active_set_batch(G, h, tolerance)
    if not solved.all():
        rest = np.nonzero(~solved)[0]
        w_rest, it_rest = _pgd_batch(G[rest], h[rest], tolerance, max_iterations)
        w[rest] = w_rest
        iterations[rest] += it_rest

    grad = 2.0 * (np.einsum("kij,kj->ki", G, w) - h)
    resid, scale = _kkt_residual(w, grad)
    return w, iterations, resid <= tolerance * scale


def solve(problem: SimplexProblem, tolerance=1e-8, max_iterations=1000):
    """Minimize the problem over the simplex.

    Deterministic for fixed inputs.  If the iteration budget runs out the
    best iterate found is returned with converged=False rather than raising.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    G, h, _ = problem.gram()
    w, iterations, converged = solve_gram_batch(
        G[None], h[None], tolerance=tolerance, max_iterations=max_iterations
    )
    w0 = w[0]
    return SimplexSolution(
        w=w0,
        objective=problem.objective(w0),
        iterations=int(iterations[0]),
        converged=bool(converged[0]),
    )


def _simplex_grid(parts: int, total: int) -> np.ndarray:
    """Integer compositions of `total` into `parts` nonnegative parts."""
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    if (total + 1) ** (parts - 1) > 1 << 26:
        raise ValueError("grid too fine to enumerate for this many models")
    axes = np.indices((total + 1,) * (parts - 1), dtype=np.int64)
    flat = axes.reshape(parts - 1, -1).T
    keep = flat[flat.sum(axis=1) <= total]
    last = total - keep.sum(axis=1)
    return np.hstack([keep, last[:, None]])


def oracle_solve(problem: SimplexProblem, grid_step: float) -> SimplexSolution:
    """Exhaustive grid search over the simplex; the testing oracle.

    Evaluates every w whose coordinates are multiples of `grid_step` and sum
    to 1, and returns the best (first encountered on ties).  Exponential in
    the model count, hence restricted to C <= 4.
    """
    C = problem.model_count
    if C > 4:
        raise ValueError("oracle_solve supports at most 4 models, got %d" % C)
    if not 0 < grid_step <= 1:
        raise ValueError("grid_step must be in (0, 1]")
    k = max(1, round(1.0 / grid_step))
    grid = _simplex_grid(C, k).astype(np.float64) / k
    G, h, const = problem.gram()
    f = (
        np.einsum("pi,ij,pj->p", grid, G, grid)
        - 2.0 * grid @ h
        + const
    )
    best = int(np.argmin(f))
    w = grid[best]
    return SimplexSolution(
        w=w,
        objective=problem.objective(w),
        iterations=grid.shape[0],
        converged=True,
    )
