"""Pure-numpy smoothing-continuation Newton kernel.

Reference implementation of the compiled ``_kernel`` extension; both expose
``minimize_level`` and ``dinkelbach`` with the same signatures and the same
iteration logic.

For a level ``gamma`` the objective is ``max_k h_k(x)`` over a family of pieces
plus one quadratic "ball" piece that keeps the minimiser bounded:

* kind 0 (affine):  ``h_k = E_k . x + e_k - gamma (C_i . x + D_i)`` with
  ``i = k mod m``, so the cone ``i`` numerator is the max of its pieces;
* kind 2 (second-order cone):  ``h_i = ||A_i x + b_i|| - gamma (C_i . x + D_i)``.

The max is replaced by ``tau * log(sum(exp(h_k / tau)))`` and the cone norm by
``sqrt(||.||^2 + mu^2)`` with ``mu = tau``; Newton's method with a backtracking
line search minimises each smoothed stage, ``tau`` shrinking tenfold per stage
down to ``tau_final``.  Iterates with any depth ``C_i . x + D_i < eta`` are never
accepted.
"""

import math

import numpy as np

# p = inf: rows +a0, -a0, +a1, -a1;  p = 1: a0 + a1, a0 - a1, -a0 + a1, -a0 - a1
_SIGNS_INF = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
_SIGNS_ONE = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]

MAX_NEWTON_PER_STAGE = 60
ARMIJO = 1e-4
STEP_FLOOR = 1e-14
BALL_FACTOR = 1e3
NEWTON_DAMPING = 2.0
MOVE_FACTOR = 1.0

# status codes shared with the compiled kernel
CONVERGED = 0
TARGET_REACHED = 1
BUDGET = 2
NOT_CONVERGED = 3
STALLED = 4

# outcomes of the Dinkelbach driver
OUTER_OK = 0
OUTER_BUDGET = 1
OUTER_ROSE = 2
OUTER_LOST = 3


def _chol_solve3(H, g):
    """Solve ``(H + lam I) d = -g`` for a symmetric PSD 3x3 ``H``."""
    tr = H[0, 0] + H[1, 1] + H[2, 2]
    lam = 1e-13 * tr + 1e-300
    for _ in range(40):
        a00 = H[0, 0] + lam
        a11 = H[1, 1] + lam
        a22 = H[2, 2] + lam
        a10 = H[1, 0]
        a20 = H[2, 0]
        a21 = H[2, 1]
        if a00 > 0.0:
            l00 = math.sqrt(a00)
            l10 = a10 / l00
            l20 = a20 / l00
            t11 = a11 - l10 * l10
            if t11 > 0.0:
                l11 = math.sqrt(t11)
                l21 = (a21 - l20 * l10) / l11
                t22 = a22 - l20 * l20 - l21 * l21
                if t22 > 0.0:
                    l22 = math.sqrt(t22)
                    y0 = -g[0] / l00
                    y1 = (-g[1] - l10 * y0) / l11
                    y2 = (-g[2] - l20 * y0 - l21 * y1) / l22
                    d2 = y2 / l22
                    d1 = (y1 - l21 * d2) / l11
                    d0 = (y0 - l10 * d1 - l20 * d2) / l00
                    return np.array([d0, d1, d2])
        lam = lam * 100.0 if lam > 1e-200 else 1e-12 * (abs(tr) + 1.0)
    return -np.asarray(g, dtype=float)


class _Prob:
    def __init__(self, kind, E, e, A, b, C, D):
        self.kind = kind
        self.C = np.array(C, dtype=float).reshape(-1, 3)
        self.D = np.array(D, dtype=float).reshape(-1)
        self.m = self.D.shape[0]
        if kind == 0:
            self.E = np.array(E, dtype=float).reshape(-1, 3)
            self.e = np.array(e, dtype=float).reshape(-1)
            reps = self.E.shape[0] // self.m
            self.Crep = np.tile(self.C, (reps, 1))
            self.Drep = np.tile(self.D, reps)
            self.M = self.E.shape[0]
        else:
            self.A = np.array(A, dtype=float).reshape(-1, 2, 3)
            self.b = np.array(b, dtype=float).reshape(-1, 2)
            self.AtA = np.einsum("ijk,ijl->ikl", self.A, self.A)
            self.M = self.m
        self.set_gamma(0.0)

    def rescale(self, dep):
        """Divide every cone by ``dep`` (its depth at the current iterate)."""
        f = 1.0 / dep
        self.C *= f[:, None]
        self.D *= f
        if self.kind == 0:
            reps = self.E.shape[0] // self.m
            self.E *= np.tile(f, reps)[:, None]
            self.e *= np.tile(f, reps)
            self.Crep = np.tile(self.C, (reps, 1))
            self.Drep = np.tile(self.D, reps)
        else:
            self.A *= f[:, None, None]
            self.b *= f[:, None]
            self.AtA *= (f * f)[:, None, None]

    def set_gamma(self, gamma):
        self.gamma = gamma
        if self.kind == 0:
            self.Eg = self.E - gamma * self.Crep
            self.eg = self.e - gamma * self.Drep

    def cone_values(self, x):
        """Exact numerators and depths of every cone."""
        dep = self.C @ x + self.D
        if self.kind == 0:
            num = (self.E @ x + self.e).reshape(-1, self.m).max(axis=0)
        else:
            r = self.A @ x + self.b
            num = np.sqrt(np.einsum("ij,ij->i", r, r))
        return num, dep

    def exact_value(self, x):
        num, dep = self.cone_values(x)
        return float(np.max(num - self.gamma * dep))

    def setup(self, x0, tol_inner, tau_cap):
        """Cheirality floor, ball piece and temperature schedule for a start x0."""
        num, dep = self.cone_values(x0)
        self.eta = min(1e-9 * (1.0 + float(dep.max())), 0.5 * float(dep.min()))
        self.bscale = 1.0 + float(np.max(np.abs(num - self.gamma * dep)))
        radius = BALL_FACTOR * (1.0 + float(np.linalg.norm(x0)))
        self.inv_r2 = 1.0 / (radius * radius)
        self.center = np.array(x0, dtype=float)
        bias = math.log(self.M + 1.0) + 1.0
        tau_final = tol_inner / (2.0 * bias)
        tau_start = 0.1 * self.bscale
        if tau_cap > 0.0 and tau_cap < tau_start:
            tau_start = max(tau_cap, tau_final)
        return tau_start, tau_final, bias

    def values(self, x, mu):
        """Smoothed piece values, ball piece and the exact max (ball excluded)."""
        if self.kind == 0:
            h = self.Eg @ x + self.eg
            hexact = h.max()
        else:
            r = self.A @ x + self.b
            sq = np.einsum("ij,ij->i", r, r)
            lin = self.gamma * (self.C @ x + self.D)
            h = np.sqrt(sq + mu * mu) - lin
            hexact = (np.sqrt(sq) - lin).max()
        dx = x - self.center
        hb = self.bscale * (dx @ dx * self.inv_r2 - 1.0)
        return h, hb, hexact

    def smoothed(self, x, tau, mu):
        h, hb, _ = self.values(x, mu)
        hmax = max(h.max(), hb)
        w = np.exp((h - hmax) / tau)
        wb = math.exp((hb - hmax) / tau)
        return hmax + tau * math.log(w.sum() + wb)

    def derivatives(self, x, tau, mu):
        h, hb, hexact = self.values(x, mu)
        hmax = max(h.max(), hb)
        w = np.exp((h - hmax) / tau)
        wb = math.exp((hb - hmax) / tau)
        W = w.sum() + wb
        F = hmax + tau * math.log(W)
        w /= W
        wb /= W
        dx = x - self.center
        Gb = 2.0 * self.bscale * self.inv_r2 * dx
        if self.kind == 0:
            G = self.Eg
            H = np.zeros((3, 3))
        else:
            r = self.A @ x + self.b
            rho = np.sqrt(np.einsum("ij,ij->i", r, r) + mu * mu)
            Atr = np.einsum("ijk,ij->ik", self.A, r)
            G = Atr / rho[:, None] - self.gamma * self.C
            # curvature of sqrt(|r|^2 + mu^2): A^T (I/rho - r r^T / rho^3) A
            Hk = self.AtA / rho[:, None, None] - np.einsum("ik,il->ikl", Atr, Atr) / (rho ** 3)[:, None, None]
            H = np.einsum("i,ikl->kl", w, Hk)
        g = w @ G + wb * Gb
        Gc = G - g
        H = H + (Gc.T * w) @ Gc / tau
        gb = Gb - g
        H += (wb / tau) * np.outer(gb, gb)
        H += wb * 2.0 * self.bscale * self.inv_r2 * np.eye(3)
        return F, g, H, hexact

    def continuation(self, x, tau0, tau_final, max_evals, target, use_target):
        """Annealed damped Newton from x; return ``(x, status, evals, tau, dec2)``."""
        x = np.array(x, dtype=float)
        evals = 0
        tau = max(tau0, tau_final)
        dec2 = math.inf
        C, D = self.C, self.D
        while True:
            mu = tau
            stalled = False
            for _ in range(MAX_NEWTON_PER_STAGE):
                if evals >= max_evals:
                    return x, BUDGET, evals, tau, dec2
                F, g, H, hexact = self.derivatives(x, tau, mu)
                evals += 1
                if use_target and hexact <= target:
                    return x, TARGET_REACHED, evals, tau, dec2
                d = _chol_solve3(H, g)
                dec2 = -(g @ d)
                if not dec2 > 0.2 * tau:
                    break
                # bound the move where the Hessian is nearly singular
                slope = dec2
                step = 1.0
                dn = math.sqrt(d @ d)
                cap = MOVE_FACTOR * (1.0 + math.sqrt(x @ x))
                if dn > cap:
                    d = d * (cap / dn)
                    slope = -(g @ d)
                elif dec2 > tau:
                    # damp steps that are large on the scale of tau
                    step = 1.0 / (1.0 + NEWTON_DAMPING * math.sqrt(dec2 / tau - 1.0))
                cd = C @ d
                neg = cd < 0.0
                if neg.any():
                    gx = C @ x + D
                    smax = np.min((gx[neg] - self.eta) / (-cd[neg]))
                    step = min(step, 0.99 * smax)
                accepted = False
                while step >= STEP_FLOOR and evals < max_evals:
                    xn = x + step * d
                    Fn = self.smoothed(xn, tau, mu)
                    evals += 1
                    if Fn <= F - ARMIJO * step * slope:
                        accepted = True
                        break
                    # minimiser of the quadratic through F, F' and Fn, kept in [0.1, 0.5] step
                    den = 2.0 * (Fn - F + step * slope)
                    trial = step * step * slope / den if den > 0.0 else 0.5 * step
                    step = min(0.5 * step, max(0.1 * step, trial))
                if not accepted:
                    # no representable decrease left at this smoothing level
                    stalled = True
                    break
                x = xn
            if tau <= tau_final:
                if dec2 <= 0.2 * tau:
                    status = CONVERGED
                else:
                    status = STALLED if stalled else NOT_CONVERGED
                return x, status, evals, tau, dec2
            tau = max(tau * 0.1, tau_final)


def minimize_level(kind, E, e, A, b, C, D, gamma, x0, tol_inner, max_evals, target,
                   use_target, tau0):
    """Minimise one level; return ``(x, value, evals, status, gap, dec2)``."""
    P = _Prob(kind, E, e, A, b, C, D)
    P.set_gamma(gamma)
    x0 = np.asarray(x0, dtype=float)
    tau_start, tau_final, bias = P.setup(x0, tol_inner, tau0)
    x, status, evals, tau, dec2 = P.continuation(x0, tau_start, tau_final, max_evals,
                                                 target, use_target)
    return x, P.exact_value(x), evals, status, tau * bias + 0.5 * dec2, dec2


def _max_ratio(num, dep):
    gmin = float(dep.min())
    if not gmin > 0.0:
        return math.inf, gmin
    return float(np.max(num / dep)), gmin


def dinkelbach(kind, E, e, A, b, C, D, x0, tol_inner, tol_delta, max_evals, max_outer,
               loose, warm):
    """Dinkelbach iterations from x0; return ``(x, delta, iters, evals, outcome, deltas)``.

    Early subproblems are solved to a tolerance ``loose * |phi_min|`` of the
    previous level and warm-started with a temperature near that suboptimality.
    Each cone is divided by its depth at the current iterate before the next
    level is solved; the ratios are unchanged but the convergence is superlinear.
    """
    P = _Prob(kind, E, e, A, b, C, D)
    x = np.array(x0, dtype=float)
    num, dep = P.cone_values(x)
    delta, gmin = _max_ratio(num, dep)
    if gmin > 0.0:
        P.rescale(dep)
        gmin = 1.0
    hist = [delta]
    tol = max(tol_inner, loose * delta * gmin)
    tau_cap = -1.0
    total = 0
    iters = 0
    outcome = OUTER_OK
    while True:
        if iters >= max_outer:
            outcome = OUTER_BUDGET
            break
        P.set_gamma(delta)
        tau_start, tau_final, bias = P.setup(x, tol, tau_cap)
        xn, status, evals, tau, dec2 = P.continuation(x, tau_start, tau_final, max_evals, 0.0, False)
        total += evals
        iters += 1
        exact = tol <= tol_inner
        num, dep = P.cone_values(xn)
        value = float(np.max(num - delta * dep))
        delta_new, gmin_new = _max_ratio(num, dep)
        if not gmin_new > 0.0:
            outcome = OUTER_LOST
            break
        if delta_new > delta * (1.0 + 1e-9) + 1e-12:
            if not exact or tau_cap > 0.0:
                tol = tol_inner
                tau_cap = -1.0
                continue
            outcome = OUTER_ROSE
            break
        decrease = delta - delta_new
        if delta_new <= delta:
            x, delta = xn, delta_new
            hist.append(delta)
        # delta_k - delta* <= -min_phi / min depth
        gap = max(0.0, -value + tau * bias + 0.5 * dec2) / gmin_new
        if delta_new <= delta:
            # unit depths at the new iterate make the next step superlinear
            P.rescale(P.cone_values(x)[1])
        if exact and (gap <= tol_delta * (1.0 + delta) or decrease <= 1e-12 * delta):
            break
        tol = loose * max(-value, 0.0)
        if tol < tol_inner or decrease <= 1e-12 * delta:
            tol = tol_inner
        # the next start has value 0 and lies within about |v| of the next optimum
        tau_cap = warm * max(-value, 0.0) + 10.0 * tol
    return x, delta, iters, total, outcome, np.array(hist)


def pieces(A, b, is_inf):
    """Affine pieces of the p = 1 (or p = inf) numerators in four blocks of ``m``."""
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    signs = _SIGNS_INF if is_inf else _SIGNS_ONE
    E = np.concatenate([s0 * A[:, 0, :] + s1 * A[:, 1, :] for s0, s1 in signs])
    e = np.concatenate([s0 * b[:, 0] + s1 * b[:, 1] for s0, s1 in signs])
    return np.ascontiguousarray(E), np.ascontiguousarray(e)


def image_errors(pcode, A, b, c, d, x):
    """``(err, r)``: image errors ``(N, 2)`` and their norms, ``inf`` behind a camera."""
    g = c @ x + d
    w = A @ x + b
    ok = g > 0.0
    if ok.all():
        err = w / g[:, None]
    else:
        err = np.full(w.shape, math.inf)
        err[ok] = w[ok] / g[ok, None]
    if pcode == 2:
        r = np.hypot(err[:, 0], err[:, 1])
    elif pcode == 1:
        r = np.abs(err[:, 0]) + np.abs(err[:, 1])
    else:
        r = np.maximum(np.abs(err[:, 0]), np.abs(err[:, 1]))
    return err, r


def support(r, idx, delta, tol_support):
    """Members of ``idx`` whose residual ``r`` (aligned with ``idx``) is near ``delta``."""
    thr = delta * (1.0 - tol_support) if delta > 1e-9 else delta - 1e-9
    members = [int(i) for i, v in zip(idx, r) if v >= thr]
    return members or [int(idx[int(np.argmax(r))])]


def classify(sup, q, err_old, r_old, err_new, r_new):
    """``(condition, j, k_j, k_q, fallback)`` for inserting ``q`` after support ``sup``.

    ``k`` is the length of the image-plane step of an observation; ``j`` is the
    obtuse support member with the largest step (the largest step overall when
    no member is obtuse, which counts as Condition 1).
    """
    ks = []
    for i in list(sup) + [q]:
        k = math.hypot(err_new[i, 0] - err_old[i, 0], err_new[i, 1] - err_old[i, 1])
        ks.append(k if math.isfinite(k) else math.inf)
    k_q = ks[-1]
    best = -1
    fb = -1
    for n, i in enumerate(sup):
        k = ks[n]
        if fb < 0 or k > ks[fb]:
            fb = n
        rn = float(r_new[i])
        ro = float(r_old[i])
        if rn * rn - (k * k + ro * ro) > 1e-9 * (1.0 + rn * rn):
            if best < 0 or k > ks[best]:
                best = n
    if best < 0:
        return 1, int(sup[fb]), ks[fb], k_q, True
    return (1 if ks[best] >= k_q else 2), int(sup[best]), ks[best], k_q, False


TRACE_FIELDS = ("t", "t_eff", "size", "delta", "q", "worst", "cond2", "updated",
                "inc_gamma", "j", "fallback")


def coreset_loop(pcode, A, b, c, d, perm, n0, x0, delta0, support0, T, tol_inner, tol_delta,
                 max_evals, max_outer, loose, warm, tol_support, record, start_fn,
                 solve_fn=None):
    """Grow the index set from ``perm[:n0]`` (solved at ``x0``) until the global check or ``T``.

    ``pcode`` is 1, 2 or 3 (for inf).  ``start_fn(idx)`` supplies a point in
    front of every camera of ``idx`` when the previous estimate is not;
    ``solve_fn(idx, x)``, when given, replaces the Dinkelbach subset solve.
    Returns a dict; ``status`` is ``OUTER_BUDGET`` if a subset solve ran out of
    iterations.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    d = np.asarray(d, float)
    perm = np.asarray(perm, dtype=np.int64)
    n = perm.size
    C = [int(i) for i in perm[:n0]]
    in_C = np.zeros(n, dtype=bool)
    in_C[C] = True
    x = np.array(x0, dtype=float)
    delta = float(delta0)
    sup = [int(i) for i in support0]
    err, r = image_errors(pcode, A, b, c, d, x)
    gamma = math.inf
    inc_len, x_inc, delta_inc = len(C), x, delta
    g = False
    V = traversals = fallbacks = rose = 0
    warn_q = -1
    status = OUTER_OK
    trace = {f: [] for f in TRACE_FIELDS}
    t = 2
    while t <= T:
        q = int(perm[int(np.argmax(r[perm]))])
        rq = float(r[q])
        close = rq <= delta * (1.0 + 1e-9) + 1e-12
        if close or in_C[q]:
            if not close:
                warn_q = q
            inc_len, x_inc, delta_inc = len(C), x, delta
            gamma = min(gamma, rq)
            g = True
            break
        updated = rq < gamma
        if updated:
            inc_len, x_inc, delta_inc = len(C), x, delta
            gamma = rq
        C.append(q)
        in_C[q] = True
        idx = np.array(C, dtype=np.int64)
        x0 = x
        if not np.all(c[idx] @ x0 + d[idx] > 0.0):
            x0 = np.asarray(start_fn(idx), float)
        if solve_fn is not None:
            xc = np.asarray(solve_fn(idx, x0), float)
        else:
            if pcode == 2:
                kind, E, e = 2, np.zeros((1, 3)), np.zeros(1)
            else:
                kind = 0
                E, e = pieces(A[idx], b[idx], pcode == 3)
            xc, _, _, _, outcome, _ = dinkelbach(kind, E, e, A[idx], b[idx], c[idx], d[idx], x0,
                                                 tol_inner, tol_delta, max_evals, max_outer,
                                                 loose, warm)
            if outcome == OUTER_BUDGET:
                status = OUTER_BUDGET
                break
            rose += outcome == OUTER_ROSE
        err_c, r_c = image_errors(pcode, A, b, c, d, xc)
        rc = r_c[idx]
        delta_c = float(rc.max())
        sup_c = support(rc, C, delta_c, tol_support)
        cond, j, _, _, fb = classify(sup, q, err, r, err_c, r_c)
        fallbacks += fb
        traversals += 1
        x, delta, sup, err, r = xc, delta_c, sup_c, err_c, r_c
        t_eff = t - 1 if cond == 2 else t
        if cond == 2:
            V += 1
        else:
            t += 1
        if record:
            for f, v in zip(TRACE_FIELDS, (t_eff + (cond == 2), t_eff, len(C), delta, q, rq,
                                           cond == 2, updated, min(gamma, float(r.max())), j, fb)):
                trace[f].append(v)
    if not g and status == OUTER_OK:
        mx = float(r.max())
        if mx < gamma:
            inc_len, x_inc, delta_inc = len(C), x, delta
            gamma = mx
    return dict(C=np.array(C, dtype=np.int64), inc_len=inc_len, x_inc=np.array(x_inc, float),
                delta_inc=float(delta_inc), gamma=float(gamma), g=g, V=V, traversals=traversals,
                fallbacks=fallbacks, t=t, status=status, rose=rose, warn_q=warn_q,
                trace={f: np.array(v) for f, v in trace.items()})
