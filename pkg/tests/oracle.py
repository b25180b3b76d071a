"""Brute-force reference minimiser: a dense grid followed by zooming grids.

Independent of the package solvers; only plain numpy evaluation of the
objective.  Works for any function that is quasiconvex over the search box.
"""

import numpy as np


def _grid(center, half, n):
    ax = [np.linspace(c - half, c + half, n) for c in center]
    g = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g


def grid_minimize(fn, center, half, n0=41, samples=2000, elite=0.02, tol=1e-10, seed=0):
    """Minimise a vectorised ``fn(points (K,3)) -> (K,)`` near ``center``.

    A ``n0**3`` grid over the box locates the basin; an elitist cross-entropy
    search with a full covariance (so it can follow thin valleys) refines it.
    """
    center = np.asarray(center, float)
    g = _grid(center, half, n0)
    v = fn(g)
    k = int(np.argmin(v))
    best, val = g[k], float(v[k])
    step = half * 2.0 / (n0 - 1)
    cov = np.eye(3) * step ** 2
    rng = np.random.default_rng(seed)
    n_elite = max(5, int(elite * samples))
    for _ in range(2000):
        pts = rng.multivariate_normal(best, cov, size=samples, method="eigh")
        vals = fn(pts)
        order = np.argsort(vals)[:n_elite]
        top = pts[order]
        if vals[order[0]] < val:
            best, val = pts[order[0]], float(vals[order[0]])
        cov = np.cov((top - best).T, bias=True) + np.outer(top.mean(0) - best, top.mean(0) - best)
        cov = cov + np.eye(3) * 1e-30
        if np.sqrt(np.trace(cov)) < tol * (1.0 + np.linalg.norm(best)):
            break
    return best, val


def max_residual_fn(P, u, p):
    """Vectorised max reprojection error (inf behind any camera)."""
    P = np.asarray(P, float)
    u = np.asarray(u, float)

    def fn(X):
        Xh = np.hstack([X, np.ones((len(X), 1))])
        proj = np.einsum("nij,kj->kni", P, Xh)
        depth = proj[:, :, 2]
        err = u[None] - proj[:, :, :2] / np.where(depth > 0, depth, 1.0)[:, :, None]
        if p == 2:
            r = np.hypot(err[..., 0], err[..., 1])
        elif p == 1:
            r = np.abs(err).sum(-1)
        else:
            r = np.abs(err).max(-1)
        r = np.where(depth > 0, r, np.inf)
        return r.max(axis=1)

    return fn


def level_fn(P, u, p, gamma):
    """Vectorised ``max_i ||A_i x + b_i||_p - gamma * depth_i``."""
    P = np.asarray(P, float)
    u = np.asarray(u, float)

    def fn(X):
        Xh = np.hstack([X, np.ones((len(X), 1))])
        proj = np.einsum("nij,kj->kni", P, Xh)
        depth = proj[:, :, 2]
        w = u[None] * depth[:, :, None] - proj[:, :, :2]
        if p == 2:
            f = np.hypot(w[..., 0], w[..., 1])
        elif p == 1:
            f = np.abs(w).sum(-1)
        else:
            f = np.abs(w).max(-1)
        return (f - gamma * depth).max(axis=1)

    return fn


def instance_arrays(inst, idx=None):
    idx = range(inst.n) if idx is None else idx
    P = np.array([inst.camera_of(i).entries for i in idx])
    u = np.array([inst.observations[i].point2 for i in idx])
    return P, u


def oracle_delta(inst, p=2, idx=None, half=1.5):
    P, u = instance_arrays(inst, idx)
    return grid_minimize(max_residual_fn(P, u, p), inst.ground_truth, half)
