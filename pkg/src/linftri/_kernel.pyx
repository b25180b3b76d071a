# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled smoothing-continuation Newton kernel.

Same algorithms and signatures as ``linftri._kernel_py``; see that module for
the description of the objective, the continuation and the Dinkelbach driver.
"""

import numpy as np

from . import _kernel_py
from libc.math cimport sqrt, exp, log, fabs, hypot, isfinite, INFINITY
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cdef int MAX_NEWTON_PER_STAGE = 60
cdef double ARMIJO = 1e-4
cdef double STEP_FLOOR = 1e-14
cdef double BALL_FACTOR = 1e3
cdef double NEWTON_DAMPING = 2.0
cdef double MOVE_FACTOR = 1.0

cdef int CONVERGED = 0
cdef int TARGET_REACHED = 1
cdef int BUDGET = 2
cdef int NOT_CONVERGED = 3
cdef int STALLED = 4

cdef int OUTER_OK = 0
cdef int OUTER_BUDGET = 1
cdef int OUTER_ROSE = 2
cdef int OUTER_LOST = 3


cdef struct Prob:
    int kind
    Py_ssize_t m
    Py_ssize_t M
    const double* E
    const double* e
    const double* A
    const double* b
    const double* C
    const double* D
    const double* AtA
    double gamma
    double inv_r2
    double bscale
    double eta
    double c0, c1, c2
    double* h
    double* w
    double* G
    double* r
    double* rho
    double* num
    double* dep


cdef void chol_solve3(double* H, double* g, double* d) noexcept nogil:
    cdef double tr = H[0] + H[4] + H[8]
    cdef double lam = 1e-13 * tr + 1e-300
    cdef double a00, a11, a22, a10, a20, a21, l00, l10, l20, l11, l21, l22, t11, t22
    cdef double y0, y1, y2
    cdef int it
    for it in range(40):
        a00 = H[0] + lam
        a11 = H[4] + lam
        a22 = H[8] + lam
        a10 = H[3]
        a20 = H[6]
        a21 = H[7]
        if a00 > 0.0:
            l00 = sqrt(a00)
            l10 = a10 / l00
            l20 = a20 / l00
            t11 = a11 - l10 * l10
            if t11 > 0.0:
                l11 = sqrt(t11)
                l21 = (a21 - l20 * l10) / l11
                t22 = a22 - l20 * l20 - l21 * l21
                if t22 > 0.0:
                    l22 = sqrt(t22)
                    y0 = -g[0] / l00
                    y1 = (-g[1] - l10 * y0) / l11
                    y2 = (-g[2] - l20 * y0 - l21 * y1) / l22
                    d[2] = y2 / l22
                    d[1] = (y1 - l21 * d[2]) / l11
                    d[0] = (y0 - l10 * d[1] - l20 * d[2]) / l00
                    return
        if lam > 1e-200:
            lam = lam * 100.0
        else:
            lam = 1e-12 * (fabs(tr) + 1.0)
    d[0] = -g[0]
    d[1] = -g[1]
    d[2] = -g[2]


cdef void cone_values(Prob* P, double* x) noexcept nogil:
    """Exact numerators and depths of every cone at x."""
    cdef Py_ssize_t i, k
    cdef double v, r0, r1
    cdef const double* Ak
    for i in range(P.m):
        P.dep[i] = P.C[3 * i] * x[0] + P.C[3 * i + 1] * x[1] + P.C[3 * i + 2] * x[2] + P.D[i]
    if P.kind == 0:
        for i in range(P.m):
            P.num[i] = -INFINITY
        for k in range(P.M):
            i = k % P.m
            v = P.E[3 * k] * x[0] + P.E[3 * k + 1] * x[1] + P.E[3 * k + 2] * x[2] + P.e[k]
            if v > P.num[i]:
                P.num[i] = v
    else:
        for i in range(P.m):
            Ak = P.A + 6 * i
            r0 = Ak[0] * x[0] + Ak[1] * x[1] + Ak[2] * x[2] + P.b[2 * i]
            r1 = Ak[3] * x[0] + Ak[4] * x[1] + Ak[5] * x[2] + P.b[2 * i + 1]
            P.num[i] = sqrt(r0 * r0 + r1 * r1)


cdef double exact_value(Prob* P, double* x) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v, best = -INFINITY
    cone_values(P, x)
    for i in range(P.m):
        v = P.num[i] - P.gamma * P.dep[i]
        if v > best:
            best = v
    return best


cdef double max_ratio(Prob* P, double* x, double* min_depth) noexcept nogil:
    """Largest num/depth at x (cone values must be current); inf if not cheiral."""
    cdef Py_ssize_t i
    cdef double v, best = -INFINITY, gmin = INFINITY
    for i in range(P.m):
        if P.dep[i] < gmin:
            gmin = P.dep[i]
        if P.dep[i] <= 0.0:
            best = INFINITY
        else:
            v = P.num[i] / P.dep[i]
            if v > best:
                best = v
    min_depth[0] = gmin
    return best


cdef double piece_values(Prob* P, double* x, double mu, double* hb, double* hexact) noexcept nogil:
    """Fill h (smoothed pieces); return their max including the ball piece."""
    cdef Py_ssize_t k, i
    cdef double v, r0, r1, sq, lin, ex, hmax
    cdef double best = -INFINITY
    cdef double dx0, dx1, dx2
    cdef const double* Ak
    hmax = -INFINITY
    if P.kind == 0:
        for k in range(P.M):
            i = k % P.m
            v = (P.E[3 * k] - P.gamma * P.C[3 * i]) * x[0] \
                + (P.E[3 * k + 1] - P.gamma * P.C[3 * i + 1]) * x[1] \
                + (P.E[3 * k + 2] - P.gamma * P.C[3 * i + 2]) * x[2] \
                + P.e[k] - P.gamma * P.D[i]
            P.h[k] = v
            if v > hmax:
                hmax = v
        best = hmax
    else:
        for k in range(P.m):
            Ak = P.A + 6 * k
            r0 = Ak[0] * x[0] + Ak[1] * x[1] + Ak[2] * x[2] + P.b[2 * k]
            r1 = Ak[3] * x[0] + Ak[4] * x[1] + Ak[5] * x[2] + P.b[2 * k + 1]
            P.r[2 * k] = r0
            P.r[2 * k + 1] = r1
            sq = r0 * r0 + r1 * r1
            lin = P.gamma * (P.C[3 * k] * x[0] + P.C[3 * k + 1] * x[1] + P.C[3 * k + 2] * x[2] + P.D[k])
            P.rho[k] = sqrt(sq + mu * mu)
            v = P.rho[k] - lin
            P.h[k] = v
            if v > hmax:
                hmax = v
            ex = sqrt(sq) - lin
            if ex > best:
                best = ex
    hexact[0] = best
    dx0 = x[0] - P.c0
    dx1 = x[1] - P.c1
    dx2 = x[2] - P.c2
    hb[0] = P.bscale * ((dx0 * dx0 + dx1 * dx1 + dx2 * dx2) * P.inv_r2 - 1.0)
    if hb[0] > hmax:
        hmax = hb[0]
    return hmax


cdef double smoothed(Prob* P, double* x, double tau, double mu) noexcept nogil:
    cdef double hb, hexact, W
    cdef Py_ssize_t k
    cdef double hmax = piece_values(P, x, mu, &hb, &hexact)
    W = exp((hb - hmax) / tau)
    for k in range(P.M):
        W += exp((P.h[k] - hmax) / tau)
    return hmax + tau * log(W)


cdef double derivatives(Prob* P, double* x, double tau, double mu,
                        double* g, double* H, double* hexact) noexcept nogil:
    cdef double hb
    cdef double hmax = piece_values(P, x, mu, &hb, hexact)
    cdef double W, wb, F, wk_, atr0, atr1, atr2, inv_rho, inv_rho3, q0, q1, q2, s
    cdef double gb[3]
    cdef Py_ssize_t k, i
    cdef const double* Ak
    cdef const double* AtAk
    W = 0.0
    for k in range(P.M):
        P.w[k] = exp((P.h[k] - hmax) / tau)
        W += P.w[k]
    wb = exp((hb - hmax) / tau)
    W += wb
    F = hmax + tau * log(W)
    for k in range(P.M):
        P.w[k] /= W
    wb /= W
    for i in range(9):
        H[i] = 0.0
    s = 2.0 * P.bscale * P.inv_r2
    gb[0] = s * (x[0] - P.c0)
    gb[1] = s * (x[1] - P.c1)
    gb[2] = s * (x[2] - P.c2)
    g[0] = wb * gb[0]
    g[1] = wb * gb[1]
    g[2] = wb * gb[2]
    if P.kind == 0:
        for k in range(P.M):
            i = k % P.m
            P.G[3 * k] = P.E[3 * k] - P.gamma * P.C[3 * i]
            P.G[3 * k + 1] = P.E[3 * k + 1] - P.gamma * P.C[3 * i + 1]
            P.G[3 * k + 2] = P.E[3 * k + 2] - P.gamma * P.C[3 * i + 2]
    else:
        for k in range(P.m):
            Ak = P.A + 6 * k
            AtAk = P.AtA + 9 * k
            atr0 = Ak[0] * P.r[2 * k] + Ak[3] * P.r[2 * k + 1]
            atr1 = Ak[1] * P.r[2 * k] + Ak[4] * P.r[2 * k + 1]
            atr2 = Ak[2] * P.r[2 * k] + Ak[5] * P.r[2 * k + 1]
            inv_rho = 1.0 / P.rho[k]
            inv_rho3 = inv_rho * inv_rho * inv_rho
            P.G[3 * k] = atr0 * inv_rho - P.gamma * P.C[3 * k]
            P.G[3 * k + 1] = atr1 * inv_rho - P.gamma * P.C[3 * k + 1]
            P.G[3 * k + 2] = atr2 * inv_rho - P.gamma * P.C[3 * k + 2]
            wk_ = P.w[k]
            # curvature of sqrt(|r|^2 + mu^2): A^T (I/rho - r r^T / rho^3) A
            H[0] += wk_ * (AtAk[0] * inv_rho - atr0 * atr0 * inv_rho3)
            H[1] += wk_ * (AtAk[1] * inv_rho - atr0 * atr1 * inv_rho3)
            H[2] += wk_ * (AtAk[2] * inv_rho - atr0 * atr2 * inv_rho3)
            H[4] += wk_ * (AtAk[4] * inv_rho - atr1 * atr1 * inv_rho3)
            H[5] += wk_ * (AtAk[5] * inv_rho - atr1 * atr2 * inv_rho3)
            H[8] += wk_ * (AtAk[8] * inv_rho - atr2 * atr2 * inv_rho3)
    for k in range(P.M):
        g[0] += P.w[k] * P.G[3 * k]
        g[1] += P.w[k] * P.G[3 * k + 1]
        g[2] += P.w[k] * P.G[3 * k + 2]
    for k in range(P.M):
        q0 = P.G[3 * k] - g[0]
        q1 = P.G[3 * k + 1] - g[1]
        q2 = P.G[3 * k + 2] - g[2]
        wk_ = P.w[k] / tau
        H[0] += wk_ * q0 * q0
        H[1] += wk_ * q0 * q1
        H[2] += wk_ * q0 * q2
        H[4] += wk_ * q1 * q1
        H[5] += wk_ * q1 * q2
        H[8] += wk_ * q2 * q2
    q0 = gb[0] - g[0]
    q1 = gb[1] - g[1]
    q2 = gb[2] - g[2]
    wk_ = wb / tau
    H[0] += wk_ * q0 * q0 + wb * s
    H[1] += wk_ * q0 * q1
    H[2] += wk_ * q0 * q2
    H[4] += wk_ * q1 * q1 + wb * s
    H[5] += wk_ * q1 * q2
    H[8] += wk_ * q2 * q2 + wb * s
    H[3] = H[1]
    H[6] = H[2]
    H[7] = H[5]
    return F


cdef int continuation(Prob* P, double* x, double tau0, double tau_final, long max_evals,
                      double target, bint use_target, long* evals_out,
                      double* tau_out, double* dec2_out) noexcept nogil:
    """Annealed damped Newton from x (updated in place); returns a status code."""
    cdef double xn[3]
    cdef double d[3]
    cdef double g[3]
    cdef double H[9]
    cdef double F, Fn, hexact, dec2, step, smax, cd, gx, mu, den, trial, slope, dn, cap
    cdef double tau = tau0 if tau0 > tau_final else tau_final
    cdef long evals = 0
    cdef int it, status
    cdef Py_ssize_t k
    cdef bint accepted, stalled, has_neg
    dec2 = INFINITY
    while True:
        mu = tau
        stalled = False
        status = -1
        for it in range(MAX_NEWTON_PER_STAGE):
            if evals >= max_evals:
                status = BUDGET
                break
            F = derivatives(P, x, tau, mu, g, H, &hexact)
            evals += 1
            if use_target and hexact <= target:
                status = TARGET_REACHED
                break
            chol_solve3(H, g, d)
            dec2 = -(g[0] * d[0] + g[1] * d[1] + g[2] * d[2])
            if not dec2 > 0.2 * tau:
                break
            # bound the move where the Hessian is nearly singular
            slope = dec2
            step = 1.0
            dn = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            cap = MOVE_FACTOR * (1.0 + sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
            if dn > cap:
                d[0] *= cap / dn
                d[1] *= cap / dn
                d[2] *= cap / dn
                slope = -(g[0] * d[0] + g[1] * d[1] + g[2] * d[2])
            elif dec2 > tau:
                # damp steps that are large on the scale of tau
                step = 1.0 / (1.0 + NEWTON_DAMPING * sqrt(dec2 / tau - 1.0))
            smax = INFINITY
            has_neg = False
            for k in range(P.m):
                cd = P.C[3 * k] * d[0] + P.C[3 * k + 1] * d[1] + P.C[3 * k + 2] * d[2]
                if cd < 0.0:
                    gx = P.C[3 * k] * x[0] + P.C[3 * k + 1] * x[1] + P.C[3 * k + 2] * x[2] + P.D[k]
                    has_neg = True
                    if (gx - P.eta) / (-cd) < smax:
                        smax = (gx - P.eta) / (-cd)
            if has_neg and 0.99 * smax < step:
                step = 0.99 * smax
            accepted = False
            while step >= STEP_FLOOR and evals < max_evals:
                xn[0] = x[0] + step * d[0]
                xn[1] = x[1] + step * d[1]
                xn[2] = x[2] + step * d[2]
                Fn = smoothed(P, xn, tau, mu)
                evals += 1
                if Fn <= F - ARMIJO * step * slope:
                    accepted = True
                    break
                # minimiser of the quadratic through F, F' and Fn, kept in [0.1, 0.5] step
                den = 2.0 * (Fn - F + step * slope)
                trial = step * step * slope / den if den > 0.0 else 0.5 * step
                if trial > 0.5 * step:
                    trial = 0.5 * step
                if trial < 0.1 * step:
                    trial = 0.1 * step
                step = trial
            if not accepted:
                # no representable decrease left at this smoothing level
                stalled = True
                break
            x[0] = xn[0]
            x[1] = xn[1]
            x[2] = xn[2]
        if status == BUDGET or status == TARGET_REACHED:
            break
        if tau <= tau_final:
            if dec2 <= 0.2 * tau:
                status = CONVERGED
            elif stalled:
                status = STALLED
            else:
                status = NOT_CONVERGED
            break
        tau = tau * 0.1
        if tau < tau_final:
            tau = tau_final
    evals_out[0] = evals
    tau_out[0] = tau
    dec2_out[0] = dec2
    return status


cdef void level_setup(Prob* P, double* x0, double tol_inner, double tau_cap,
                      double* tau_start, double* tau_final, double* bias) noexcept nogil:
    """Cheirality floor, ball piece and temperature schedule for a start x0."""
    cdef Py_ssize_t i
    cdef double gmin = INFINITY, gmax = -INFINITY, hmax = 0.0, v
    cone_values(P, x0)
    for i in range(P.m):
        if P.dep[i] < gmin:
            gmin = P.dep[i]
        if P.dep[i] > gmax:
            gmax = P.dep[i]
        v = fabs(P.num[i] - P.gamma * P.dep[i])
        if v > hmax:
            hmax = v
    P.eta = 1e-9 * (1.0 + gmax)
    if P.eta > 0.5 * gmin:
        P.eta = 0.5 * gmin
    P.bscale = 1.0 + hmax
    v = BALL_FACTOR * (1.0 + sqrt(x0[0] * x0[0] + x0[1] * x0[1] + x0[2] * x0[2]))
    P.inv_r2 = 1.0 / (v * v)
    P.c0 = x0[0]
    P.c1 = x0[1]
    P.c2 = x0[2]
    bias[0] = log(<double>P.M + 1.0) + 1.0
    tau_final[0] = tol_inner / (2.0 * bias[0])
    tau_start[0] = 0.1 * P.bscale
    if tau_cap > 0.0 and tau_cap < tau_start[0]:
        tau_start[0] = tau_cap if tau_cap > tau_final[0] else tau_final[0]


cdef void gram(const double* A, double* out, Py_ssize_t m) noexcept nogil:
    """``A_i^T A_i`` for each 2x3 block."""
    cdef Py_ssize_t i, r, c
    for i in range(m):
        for r in range(3):
            for c in range(3):
                out[9 * i + 3 * r + c] = A[6 * i + r] * A[6 * i + c] + A[6 * i + 3 + r] * A[6 * i + 3 + c]


cdef void _copy(double* dst, const double[::1] src, Py_ssize_t n) noexcept:
    if n > 0:
        memcpy(dst, &src[0], n * sizeof(double))


cdef class _Buffers:
    """One allocation holding private copies of the data and the workspace."""
    cdef double* block
    cdef Py_ssize_t m, M
    cdef int kind
    cdef double *E
    cdef double *e
    cdef double *A
    cdef double *b
    cdef double *C
    cdef double *D
    cdef double *AtA
    cdef double *h
    cdef double *w
    cdef double *G
    cdef double *r
    cdef double *rho
    cdef double *num
    cdef double *dep

    def __cinit__(self):
        self.block = NULL

    def __dealloc__(self):
        free(self.block)

    cdef int alloc(self, int kind, Py_ssize_t m, Py_ssize_t M) except -1:
        cdef Py_ssize_t nE = M if kind == 0 else 0
        cdef Py_ssize_t nA = m if kind != 0 else 0
        self.kind = kind
        self.m = m
        self.M = M
        # E 3M, e M, A 6m, b 2m, AtA 9m, C 3m, D m, h M, w M, G 3M, r 2m, rho m, num m, dep m
        self.block = <double*> malloc((4 * nE + 17 * nA + 9 * m + 5 * M + 1) * sizeof(double))
        if self.block == NULL:
            raise MemoryError()
        self.E = self.block
        self.e = self.E + 3 * nE
        self.A = self.e + nE
        self.b = self.A + 6 * nA
        self.AtA = self.b + 2 * nA
        self.C = self.AtA + 9 * nA
        self.D = self.C + 3 * m
        self.h = self.D + m
        self.w = self.h + M
        self.G = self.w + M
        self.r = self.G + 3 * M
        self.rho = self.r + 2 * m
        self.num = self.rho + m
        self.dep = self.num + m
        return 0

    cdef void fill(self, Prob* P) noexcept nogil:
        P.kind = self.kind
        P.m = self.m
        P.M = self.M
        P.E = self.E
        P.e = self.e
        P.A = self.A
        P.b = self.b
        P.C = self.C
        P.D = self.D
        P.AtA = self.AtA
        P.h = self.h
        P.w = self.w
        P.G = self.G
        P.r = self.r
        P.rho = self.rho
        P.num = self.num
        P.dep = self.dep

    cdef void rescale(self) noexcept nogil:
        """Divide every cone by its current depth (held in ``dep``)."""
        cdef Py_ssize_t i, k, j
        cdef Py_ssize_t m = self.m
        cdef double f
        for i in range(m):
            f = 1.0 / self.dep[i]
            self.D[i] *= f
            for j in range(3):
                self.C[3 * i + j] *= f
            if self.kind != 0:
                for j in range(6):
                    self.A[6 * i + j] *= f
                for j in range(2):
                    self.b[2 * i + j] *= f
                for j in range(9):
                    self.AtA[9 * i + j] *= f * f
            self.rho[i] = f
        if self.kind == 0:
            for k in range(self.M):
                f = self.rho[k % m]
                self.e[k] *= f
                for j in range(3):
                    self.E[3 * k + j] *= f


cdef _Buffers buffers_from_arrays(int kind, E_, e_, A_, b_, C_, D_):
    cdef const double[::1] C = np.ascontiguousarray(C_, dtype=np.float64).reshape(-1)
    cdef const double[::1] D = np.ascontiguousarray(D_, dtype=np.float64).reshape(-1)
    cdef const double[::1] E, e, A, b
    cdef Py_ssize_t m = D.shape[0]
    cdef _Buffers buf = _Buffers()
    if kind == 0:
        E = np.ascontiguousarray(E_, dtype=np.float64).reshape(-1)
        e = np.ascontiguousarray(e_, dtype=np.float64).reshape(-1)
        buf.alloc(kind, m, e.shape[0])
        _copy(buf.E, E, 3 * buf.M)
        _copy(buf.e, e, buf.M)
    else:
        A = np.ascontiguousarray(A_, dtype=np.float64).reshape(-1)
        b = np.ascontiguousarray(b_, dtype=np.float64).reshape(-1)
        buf.alloc(kind, m, m)
        _copy(buf.A, A, 6 * m)
        _copy(buf.b, b, 2 * m)
        gram(buf.A, buf.AtA, m)
    _copy(buf.C, C, 3 * m)
    _copy(buf.D, D, m)
    return buf


cdef _Buffers buffers_from_subset(int pcode, const double* A, const double* b, const double* c,
                                  const double* d, const long* idx, Py_ssize_t m):
    """Cone data of rows ``idx``; p = 1 and inf become four blocks of affine pieces."""
    cdef _Buffers buf = _Buffers()
    cdef Py_ssize_t n, i, j, k, blk
    cdef double s0, s1
    if pcode == 2:
        buf.alloc(2, m, m)
    else:
        buf.alloc(0, m, 4 * m)
    for n in range(m):
        i = idx[n]
        for j in range(3):
            buf.C[3 * n + j] = c[3 * i + j]
        buf.D[n] = d[i]
        if pcode == 2:
            for j in range(6):
                buf.A[6 * n + j] = A[6 * i + j]
            buf.b[2 * n] = b[2 * i]
            buf.b[2 * n + 1] = b[2 * i + 1]
            continue
        for blk in range(4):
            k = blk * m + n
            if pcode == 3:
                # rows +a0, -a0, +a1, -a1
                s0 = 1.0 if blk == 0 else (-1.0 if blk == 1 else 0.0)
                s1 = 1.0 if blk == 2 else (-1.0 if blk == 3 else 0.0)
            else:
                # rows a0 + a1, a0 - a1, -a0 + a1, -a0 - a1
                s0 = 1.0 if blk < 2 else -1.0
                s1 = 1.0 if blk % 2 == 0 else -1.0
            for j in range(3):
                buf.E[3 * k + j] = s0 * A[6 * i + j] + s1 * A[6 * i + 3 + j]
            buf.e[k] = s0 * b[2 * i] + s1 * b[2 * i + 1]
    if pcode == 2:
        gram(buf.A, buf.AtA, m)
    return buf


def minimize_level(int kind, E_, e_, A_, b_, C_, D_, double gamma, x0_, double tol_inner,
                   long max_evals, double target, bint use_target, double tau0):
    """Minimise one level; return ``(x, value, evals, status, gap, dec2)``."""
    cdef _Buffers buf = buffers_from_arrays(kind, E_, e_, A_, b_, C_, D_)
    cdef Prob P
    buf.fill(&P)
    P.gamma = gamma
    cdef const double[::1] x0 = np.ascontiguousarray(x0_, dtype=np.float64)
    cdef double x[3]
    cdef double tau_start, tau_final, bias, tau, dec2, value
    cdef long evals
    cdef int status
    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]
    with nogil:
        level_setup(&P, x, tol_inner, tau0, &tau_start, &tau_final, &bias)
        status = continuation(&P, x, tau_start, tau_final, max_evals, target, use_target,
                              &evals, &tau, &dec2)
        value = exact_value(&P, x)
    return (np.array([x[0], x[1], x[2]]), value, evals, status,
            tau * bias + 0.5 * dec2, dec2)


cdef struct Outer:
    double tol_inner
    double tol_delta
    long max_evals
    long max_outer
    double loose
    double warm


cdef int dinkel_run(_Buffers buf, double* x, Outer* o, double* delta_out, long* iters_out,
                    long* evals_out, double* hist, Py_ssize_t* nhist_out) noexcept nogil:
    """Dinkelbach driver on ``buf`` from x (updated in place); returns an outcome code."""
    cdef Prob P
    buf.fill(&P)
    cdef double xn[3]
    cdef double delta, delta_new, gmin, gmin_new, tol, tau_cap, tau_start, tau_final, bias
    cdef double tau, dec2, value, gap, decrease
    cdef long evals, total = 0, iters = 0
    cdef Py_ssize_t nhist = 0
    cdef int status, outcome = OUTER_OK
    cdef bint exact
    cone_values(&P, x)
    delta = max_ratio(&P, x, &gmin)
    if gmin > 0.0:
        buf.rescale()
        gmin = 1.0
    if hist != NULL:
        hist[0] = delta
    nhist = 1
    tol = o.loose * delta * gmin
    if tol < o.tol_inner:
        tol = o.tol_inner
    tau_cap = -1.0
    while True:
        if iters >= o.max_outer:
            outcome = OUTER_BUDGET
            break
        P.gamma = delta
        xn[0] = x[0]
        xn[1] = x[1]
        xn[2] = x[2]
        level_setup(&P, xn, tol, tau_cap, &tau_start, &tau_final, &bias)
        status = continuation(&P, xn, tau_start, tau_final, o.max_evals, 0.0, False,
                              &evals, &tau, &dec2)
        total += evals
        iters += 1
        exact = tol <= o.tol_inner
        value = exact_value(&P, xn)
        delta_new = max_ratio(&P, xn, &gmin_new)
        if not gmin_new > 0.0:
            outcome = OUTER_LOST
            break
        if delta_new > delta * (1.0 + 1e-9) + 1e-12:
            if not exact or tau_cap > 0.0:
                tol = o.tol_inner
                tau_cap = -1.0
                continue
            outcome = OUTER_ROSE
            break
        decrease = delta - delta_new
        if delta_new <= delta:
            x[0] = xn[0]
            x[1] = xn[1]
            x[2] = xn[2]
            delta = delta_new
            if hist != NULL:
                hist[nhist] = delta
            nhist += 1
        # delta_k - delta* <= -min_phi / min depth
        gap = -value + tau * bias + 0.5 * dec2
        if gap < 0.0:
            gap = 0.0
        gap = gap / gmin_new
        if delta_new <= delta:
            # unit depths at the new iterate make the next step superlinear
            cone_values(&P, x)
            buf.rescale()
        if exact and (gap <= o.tol_delta * (1.0 + delta) or decrease <= 1e-12 * delta):
            break
        tol = o.loose * (-value if value < 0.0 else 0.0)
        if tol < o.tol_inner or decrease <= 1e-12 * delta:
            tol = o.tol_inner
        # the next start has value 0 and lies within about |v| of the next optimum
        tau_cap = o.warm * (-value if value < 0.0 else 0.0) + 10.0 * tol
    delta_out[0] = delta
    iters_out[0] = iters
    evals_out[0] = total
    nhist_out[0] = nhist
    return outcome


def dinkelbach(int kind, E_, e_, A_, b_, C_, D_, x0_, double tol_inner, double tol_delta,
               long max_evals, long max_outer, double loose, double warm):
    """Dinkelbach iterations from x0; return ``(x, delta, iters, evals, outcome, deltas)``.

    Each cone is divided by its depth at the current iterate before the next
    level is solved; the ratios are unchanged but the convergence is superlinear.
    """
    cdef _Buffers buf = buffers_from_arrays(kind, E_, e_, A_, b_, C_, D_)
    cdef const double[::1] x0 = np.ascontiguousarray(x0_, dtype=np.float64)
    hist_arr = np.empty(max_outer + 1)
    cdef double[::1] hist = hist_arr
    cdef double x[3]
    cdef Outer o = Outer(tol_inner, tol_delta, max_evals, max_outer, loose, warm)
    cdef double delta
    cdef long iters, total
    cdef Py_ssize_t nhist
    cdef int outcome
    x[0] = x0[0]
    x[1] = x0[1]
    x[2] = x0[2]
    with nogil:
        outcome = dinkel_run(buf, x, &o, &delta, &iters, &total, &hist[0], &nhist)
    return (np.array([x[0], x[1], x[2]]), delta, iters, total, outcome,
            hist_arr[:nhist].copy())


cdef void errors_at(int pcode, const double* A, const double* b, const double* c,
                    const double* d, Py_ssize_t n, const double* x, double* err,
                    double* r) noexcept nogil:
    """Image errors and their norms at x; ``inf`` behind a camera."""
    cdef Py_ssize_t i
    cdef double g, w0, w1, a0, a1
    for i in range(n):
        g = c[3 * i] * x[0] + c[3 * i + 1] * x[1] + c[3 * i + 2] * x[2] + d[i]
        if not g > 0.0:
            err[2 * i] = INFINITY
            err[2 * i + 1] = INFINITY
            r[i] = INFINITY
            continue
        w0 = A[6 * i] * x[0] + A[6 * i + 1] * x[1] + A[6 * i + 2] * x[2] + b[2 * i]
        w1 = A[6 * i + 3] * x[0] + A[6 * i + 4] * x[1] + A[6 * i + 5] * x[2] + b[2 * i + 1]
        w0 /= g
        w1 /= g
        err[2 * i] = w0
        err[2 * i + 1] = w1
        a0 = fabs(w0)
        a1 = fabs(w1)
        if pcode == 2:
            r[i] = hypot(w0, w1)
        elif pcode == 1:
            r[i] = a0 + a1
        else:
            r[i] = a0 if a0 >= a1 else a1


cdef inline double _step(const double* err, const double* err_c, long k) noexcept nogil:
    cdef double s = hypot(err_c[2 * k] - err[2 * k], err_c[2 * k + 1] - err[2 * k + 1])
    return s if isfinite(s) else INFINITY


def coreset_loop(int pcode, A_, b_, c_, d_, perm_, Py_ssize_t n0, x0_, double delta0, support0,
                 long T, double tol_inner, double tol_delta, long max_evals, long max_outer,
                 double loose, double warm, double tol_support, bint record, start_fn,
                 solve_fn=None):
    """Compiled counterpart of ``_kernel_py.coreset_loop`` (same arguments and result)."""
    if solve_fn is not None:
        return _kernel_py.coreset_loop(pcode, A_, b_, c_, d_, perm_, n0, x0_, delta0, support0,
                                       T, tol_inner, tol_delta, max_evals, max_outer, loose,
                                       warm, tol_support, record, start_fn, solve_fn)
    cdef const double[::1] A = np.ascontiguousarray(A_, dtype=np.float64).reshape(-1)
    cdef const double[::1] b = np.ascontiguousarray(b_, dtype=np.float64).reshape(-1)
    cdef const double[::1] c = np.ascontiguousarray(c_, dtype=np.float64).reshape(-1)
    cdef const double[::1] d = np.ascontiguousarray(d_, dtype=np.float64).reshape(-1)
    cdef const long[::1] perm = np.ascontiguousarray(perm_, dtype=np.int64)
    cdef Py_ssize_t n = perm.shape[0]
    Cs_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] Cs = Cs_arr
    inC_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] inC = inC_arr
    # error/residual buffers at the current and the candidate estimates
    work = np.empty(6 * n, dtype=np.float64)
    cdef double[::1] wk = work
    cdef double* err = &wk[0]
    cdef double* r = &wk[2 * n]
    cdef double* err_c = &wk[3 * n]
    cdef double* r_c = &wk[5 * n]
    cdef double* tmp
    sup_arr = np.empty(n + 1, dtype=np.int64)
    supc_arr = np.empty(n + 1, dtype=np.int64)
    cdef long[::1] sup = sup_arr
    cdef long[::1] supc = supc_arr
    cdef long[::1] swap
    cdef Py_ssize_t nsup, nsupc, size, inc_len, i, k, jn, best, fb
    cdef double x[3]
    cdef double xc[3]
    cdef double x_inc[3]
    cdef double delta = delta0, delta_inc, delta_c, gamma = INFINITY, rq, thr, kk, rn, ro, kq
    cdef double mx, dummy_d
    cdef long t = 2, V = 0, traversals = 0, fallbacks = 0, rose = 0, warn_q = -1, q
    cdef long t_eff, dummy_l, j
    cdef Py_ssize_t dummy_n
    cdef int status = OUTER_OK, outcome, cond
    cdef bint g = False, updated, cheiral, is_fb
    cdef Outer o = Outer(tol_inner, tol_delta, max_evals, max_outer, loose, warm)
    cdef const double[::1] xs = np.ascontiguousarray(x0_, dtype=np.float64)
    cdef const double[::1] xs2
    cdef _Buffers buf
    trace = {f: [] for f in _kernel_py.TRACE_FIELDS}

    for i in range(3):
        x[i] = xs[i]
        x_inc[i] = xs[i]
    for i in range(n0):
        Cs[i] = perm[i]
        inC[perm[i]] = 1
    size = n0
    inc_len = size
    delta_inc = delta
    nsup = 0
    for v in support0:
        sup[nsup] = v
        nsup += 1
    errors_at(pcode, &A[0], &b[0], &c[0], &d[0], n, x, err, r)

    while t <= T:
        # worst residual; ties go to the earliest permuted position
        q = perm[0]
        for i in range(1, n):
            if r[perm[i]] > r[q]:
                q = perm[i]
        rq = r[q]
        if rq <= delta * (1.0 + 1e-9) + 1e-12 or inC[q]:
            if not rq <= delta * (1.0 + 1e-9) + 1e-12:
                warn_q = q
            inc_len = size
            x_inc[0] = x[0]
            x_inc[1] = x[1]
            x_inc[2] = x[2]
            delta_inc = delta
            if rq < gamma:
                gamma = rq
            g = True
            break
        updated = rq < gamma
        if updated:
            inc_len = size
            x_inc[0] = x[0]
            x_inc[1] = x[1]
            x_inc[2] = x[2]
            delta_inc = delta
            gamma = rq
        Cs[size] = q
        inC[q] = 1
        size += 1
        cheiral = True
        for i in range(size):
            k = Cs[i]
            if not c[3 * k] * x[0] + c[3 * k + 1] * x[1] + c[3 * k + 2] * x[2] + d[k] > 0.0:
                cheiral = False
                break
        if cheiral:
            xc[0] = x[0]
            xc[1] = x[1]
            xc[2] = x[2]
        else:
            xs2 = np.ascontiguousarray(start_fn(Cs_arr[:size].copy()), dtype=np.float64)
            xc[0] = xs2[0]
            xc[1] = xs2[1]
            xc[2] = xs2[2]
        buf = buffers_from_subset(pcode, &A[0], &b[0], &c[0], &d[0], &Cs[0], size)
        with nogil:
            outcome = dinkel_run(buf, xc, &o, &dummy_d, &dummy_l, &dummy_l, NULL, &dummy_n)
        if outcome == OUTER_BUDGET:
            status = OUTER_BUDGET
            break
        if outcome == OUTER_ROSE:
            rose += 1
        errors_at(pcode, &A[0], &b[0], &c[0], &d[0], n, xc, err_c, r_c)
        delta_c = -INFINITY
        for i in range(size):
            if r_c[Cs[i]] > delta_c:
                delta_c = r_c[Cs[i]]
        thr = delta_c * (1.0 - tol_support) if delta_c > 1e-9 else delta_c - 1e-9
        nsupc = 0
        for i in range(size):
            if r_c[Cs[i]] >= thr:
                supc[nsupc] = Cs[i]
                nsupc += 1
        if nsupc == 0:
            best = 0
            for i in range(1, size):
                if r_c[Cs[i]] > r_c[Cs[best]]:
                    best = i
            supc[0] = Cs[best]
            nsupc = 1
        # classify the insertion of q against the previous support
        kq = hypot(err_c[2 * q] - err[2 * q], err_c[2 * q + 1] - err[2 * q + 1])
        if not isfinite(kq):
            kq = INFINITY
        best = -1
        fb = -1
        for jn in range(nsup):
            k = sup[jn]
            kk = hypot(err_c[2 * k] - err[2 * k], err_c[2 * k + 1] - err[2 * k + 1])
            if not isfinite(kk):
                kk = INFINITY
            if fb < 0 or kk > _step(err, err_c, sup[fb]):
                fb = jn
            rn = r_c[k]
            ro = r[k]
            if rn * rn - (kk * kk + ro * ro) > 1e-9 * (1.0 + rn * rn):
                if best < 0 or kk > _step(err, err_c, sup[best]):
                    best = jn
        if best < 0:
            is_fb = True
            cond = 1
            j = sup[fb]
            fallbacks += 1
        else:
            is_fb = False
            j = sup[best]
            cond = 1 if _step(err, err_c, j) >= kq else 2
        traversals += 1
        x[0] = xc[0]
        x[1] = xc[1]
        x[2] = xc[2]
        delta = delta_c
        swap = sup
        sup = supc
        supc = swap
        nsup = nsupc
        tmp = err
        err = err_c
        err_c = tmp
        tmp = r
        r = r_c
        r_c = tmp
        t_eff = t - 1 if cond == 2 else t
        if cond == 2:
            V += 1
        else:
            t += 1
        if record:
            mx = r[0]
            for i in range(1, n):
                if r[i] > mx:
                    mx = r[i]
            for f, val in zip(_kernel_py.TRACE_FIELDS,
                              (t_eff + (cond == 2), t_eff, size, delta, q, rq, cond == 2,
                               updated, gamma if gamma < mx else mx, j, is_fb)):
                trace[f].append(val)
    if not g and status == OUTER_OK:
        mx = r[0]
        for i in range(1, n):
            if r[i] > mx:
                mx = r[i]
        if mx < gamma:
            inc_len = size
            x_inc[0] = x[0]
            x_inc[1] = x[1]
            x_inc[2] = x[2]
            delta_inc = delta
            gamma = mx
    return dict(C=Cs_arr[:size].copy(), inc_len=inc_len,
                x_inc=np.array([x_inc[0], x_inc[1], x_inc[2]]), delta_inc=delta_inc,
                gamma=gamma, g=bool(g), V=V, traversals=traversals, fallbacks=fallbacks, t=t,
                status=status, rose=rose, warn_q=warn_q,
                trace={f: np.array(v) for f, v in trace.items()})

