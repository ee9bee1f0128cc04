"""Slow but obviously-correct reference implementations for the tests.

Everything here is dense numpy with no chunking, no compiled kernels, and
no shared code with the package internals beyond the model container.
"""
import numpy as np
from scipy.special import logsumexp

from patchwork.field import MINUS, PLUS


def dense_field(model, points):
    """Field values by materializing the full (m, n) logit matrix."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(X))
    for group, sign, beta in ((PLUS, 1.0, model.beta_plus),
                              (MINUS, -1.0, model.beta_minus)):
        idx = model.group_indices(group)
        z = beta * (X @ model.a[idx].T + model.c[idx]) + model.log_s[idx]
        out += sign * logsumexp(z, axis=1) / beta
    return out


def dense_field_grad(model, points):
    """Spatial gradients via the softmax convex combination of directions."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    g = np.zeros_like(X)
    for group, sign, beta in ((PLUS, 1.0, model.beta_plus),
                              (MINUS, -1.0, model.beta_minus)):
        idx = model.group_indices(group)
        z = beta * (X @ model.a[idx].T + model.c[idx]) + model.log_s[idx]
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        w /= w.sum(axis=1, keepdims=True)
        g += sign * (w @ model.a[idx])
    return g


def dense_tropical(model, points):
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(X))
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx = model.group_indices(group)
        out += sign * (X @ model.a[idx].T + model.c[idx]).max(axis=1)
    return out


# ---------------------------------------------------------------------------
# finite differences


def fd_value(fn, x, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def fd_model_params(loss_of_model, model, h=1e-6):
    """Central differences of a model-valued loss w.r.t. (a, c, log_s).

    Perturbs copies of the raw arrays; weightnorm models are resynced so
    the perturbation lands on the materialized direction.
    """
    base = model.copy()
    dA = np.zeros_like(base.a)
    dc = np.zeros_like(base.c)
    dls = np.zeros_like(base.log_s)

    def with_arrays(a, c, ls):
        m2 = base.copy()
        m2.weightnorm = False
        m2.wn_g = m2.wn_v = None
        m2.a, m2.c, m2.log_s = a, c, ls
        return m2

    for (i, j), _ in np.ndenumerate(base.a):
        a = base.a.copy()
        a[i, j] += h
        up = loss_of_model(with_arrays(a, base.c, base.log_s))
        a[i, j] -= 2 * h
        dn = loss_of_model(with_arrays(a, base.c, base.log_s))
        dA[i, j] = (up - dn) / (2 * h)
    for i in range(base.n_terms):
        c = base.c.copy()
        c[i] += h
        up = loss_of_model(with_arrays(base.a, c, base.log_s))
        c[i] -= 2 * h
        dn = loss_of_model(with_arrays(base.a, c, base.log_s))
        dc[i] = (up - dn) / (2 * h)
        ls = base.log_s.copy()
        ls[i] += h
        up = loss_of_model(with_arrays(base.a, base.c, ls))
        ls[i] -= 2 * h
        dn = loss_of_model(with_arrays(base.a, base.c, ls))
        dls[i] = (up - dn) / (2 * h)
    return dA, dc, dls


def frozen_w(model, X):
    """Per-group softmax attribution matrices at the current parameters."""
    out = {}
    for group, beta in ((PLUS, model.beta_plus), (MINUS, model.beta_minus)):
        idx = model.group_indices(group)
        z = beta * (X @ model.a[idx].T + model.c[idx]) + model.log_s[idx]
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        w /= w.sum(axis=1, keepdims=True)
        out[group] = (idx, w)
    return out


def prune_loss_frozen(model, w_by_group):
    """Prune loss with the attribution weights held constant."""
    total = 0.0
    for group in (PLUS, MINUS):
        idx, w = w_by_group[group]
        s = np.exp(model.log_s[idx])
        total += s.mean()
        total += np.mean(np.maximum(1.0 - w @ s, 0.0))
    return float(total)


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.clip(t, None, 50))),
                    np.exp(np.clip(t, -50, None))
                    / (1.0 + np.exp(np.clip(t, -50, None))))


def dw(x):
    u = np.asarray(x) - 0.5
    return 4 * u * u - 4 * np.abs(u) + 1


def reference_losses(model, X, U, Y, w_frozen=None):
    """All four losses, dense math, prune weights optionally frozen."""
    F = dense_field(model, X)
    sur = float(np.mean(np.abs(F)))
    G = dense_field_grad(model, X)
    gn = np.linalg.norm(G, axis=1)
    ok = gn >= 1e-12
    if ok.any():
        cos = np.sum(G[ok] * np.asarray(U)[ok], axis=1) / (
            gn[ok] * np.linalg.norm(np.asarray(U)[ok], axis=1))
        normal = float(np.mean(1.0 - cos))
    else:
        normal = 0.0
    reg = float(np.mean(dw(sigmoid(-dense_field(model, Y))) ** 2)) if len(Y) else 0.0
    w = w_frozen if w_frozen is not None else frozen_w(model, X)
    prune = prune_loss_frozen(model, w)
    return {"sur": sur, "normal": normal, "reg": reg, "prune": prune}


# ---------------------------------------------------------------------------
# brute-force metrics


def brute_nearest(A, B):
    """Exact nearest distances from each row of A to the set B, O(n^2)."""
    D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return D.min(axis=1)


def brute_chamfer(A, B):
    return float(0.5 * (brute_nearest(A, B).mean() + brute_nearest(B, A).mean()))


def brute_hausdorff(A, B):
    return float(max(brute_nearest(A, B).max(), brute_nearest(B, A).max()))


def brute_fscore(A, B, cutoff):
    precision = float(np.mean(brute_nearest(A, B) <= cutoff))
    recall = float(np.mean(brute_nearest(B, A) <= cutoff))
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# random models


def random_model(rng, n=8, dim=2, *, constant_plus=False, beta=20.0,
                 weightnorm=False):
    """General-position random model with roughly balanced groups."""
    from patchwork.field import PatchworkModel
    a = rng.normal(size=(n, dim))
    c = rng.normal(size=n) * 0.5
    group = np.where(np.arange(n) % 2 == 0, PLUS, MINUS).astype(np.int8)
    if constant_plus:
        a[0] = 0.0
        c[0] = abs(c[0]) + 0.1
        group[0] = PLUS
    s = rng.uniform(0.5, 2.0, size=n)
    return PatchworkModel.from_arrays(a, c, group, beta, beta, s=s,
                                      weightnorm=weightnorm)
