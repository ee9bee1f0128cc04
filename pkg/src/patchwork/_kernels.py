"""Compiled streaming kernels for batch evaluation and the training step.

All kernels stream over terms per point, so auxiliary memory is O(n + m)
and never O(n*m).  Parallelism is over a fixed number of point chunks
(independent of the thread count); every chunk accumulates into its own
partial buffers and the partials are combined serially in chunk order, so
results are bitwise reproducible for a given input regardless of how many
threads execute the chunks.

Logit convention per group: z_i = beta * (<a_i, x> + c_i) + log s_i, with
the group's running maximum subtracted before exponentiation.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .errors import EmptyInput
from .field import MINUS, PLUS, PatchworkModel

CHUNKS = 16

# exp(z - zmax) below this is under 1.2e-20: invisible next to the
# leading term of the sum at double precision, so the term is dropped.
# The sharp betas in use make most terms fall below it at most points.
Z_CUTOFF = -46.0


@njit(cache=True, inline="always")
def _dot(a, x, d):
    acc = 0.0
    for k in range(d):
        acc += a[k] * x[k]
    return acc


@njit(cache=True, inline="always")
def _zpass(AT, c, ls, b, x, d, z):
    """Logits of one group at one point.

    ``AT`` is the (d, n) transpose of the direction matrix: column streams
    keep the term loop SIMD-friendly.  Association matches _dot exactly,
    so values are bitwise independent of which branch runs.
    """
    n = AT.shape[1]
    if d == 3:
        x0, x1, x2 = x[0], x[1], x[2]
        for i in range(n):
            z[i] = b * (AT[0, i] * x0 + AT[1, i] * x1 + AT[2, i] * x2 + c[i]) + ls[i]
    elif d == 2:
        x0, x1 = x[0], x[1]
        for i in range(n):
            z[i] = b * (AT[0, i] * x0 + AT[1, i] * x1 + c[i]) + ls[i]
    else:
        for i in range(n):
            acc = 0.0
            for k in range(d):
                acc += AT[k, i] * x[k]
            z[i] = b * (acc + c[i]) + ls[i]
    zmax = -1e300
    for i in range(n):
        if z[i] > zmax:
            zmax = z[i]
    return zmax


@njit(cache=True)
def _point_field(Ap, ApT, cp, lsp, Am, AmT, cm, lsm, bp, bm, x, d, wp, wm,
                 pbar, mbar):
    """Two-pass field evaluation at one point.

    Fills wp/wm with softmax weights and pbar/mbar with the softmax-averaged
    directions of each group.  Returns (F, zbar_p, zbar_m) where zbar is the
    group's log-sum-exp divided by beta.
    """
    n_p = Ap.shape[0]
    n_m = Am.shape[0]
    zp_max = _zpass(ApT, cp, lsp, bp, x, d, wp)
    zm_max = _zpass(AmT, cm, lsm, bm, x, d, wm)
    sp = 0.0
    for k in range(d):
        pbar[k] = 0.0
    for i in range(n_p):
        z = wp[i] - zp_max
        if z > Z_CUTOFF:
            e = np.exp(z)
            wp[i] = e
            sp += e
            for k in range(d):
                pbar[k] += e * Ap[i, k]
        else:
            wp[i] = 0.0
    sm = 0.0
    for k in range(d):
        mbar[k] = 0.0
    for i in range(n_m):
        z = wm[i] - zm_max
        if z > Z_CUTOFF:
            e = np.exp(z)
            wm[i] = e
            sm += e
            for k in range(d):
                mbar[k] += e * Am[i, k]
        else:
            wm[i] = 0.0
    for i in range(n_p):
        wp[i] /= sp
    for i in range(n_m):
        wm[i] /= sm
    for k in range(d):
        pbar[k] /= sp
        mbar[k] /= sm
    vp = (zp_max + np.log(sp)) / bp
    vm = (zm_max + np.log(sm)) / bm
    return vp - vm, vp, vm


@njit(cache=True, parallel=True)
def _values_kernel(Ap, cp, lsp, Am, cm, lsm, bp, bm, X):
    m, d = X.shape
    out = np.empty(m)
    grads = np.empty((m, d))
    ApT = np.ascontiguousarray(Ap.T)
    AmT = np.ascontiguousarray(Am.T)
    for ch in prange(CHUNKS):
        j0 = ch * m // CHUNKS
        j1 = (ch + 1) * m // CHUNKS
        wp = np.empty(Ap.shape[0])
        wm = np.empty(Am.shape[0])
        pbar = np.empty(d)
        mbar = np.empty(d)
        for j in range(j0, j1):
            f, _, _ = _point_field(Ap, ApT, cp, lsp, Am, AmT, cm, lsm,
                                   bp, bm, X[j], d, wp, wm, pbar, mbar)
            out[j] = f
            for k in range(d):
                grads[j, k] = pbar[k] - mbar[k]
    return out, grads


@njit(cache=True, parallel=True)
def _surface_kernel(Ap, cp, lsp, sp_w, Am, cm, lsm, sm_w, bp, bm, X, U,
                    use_sur, use_normal, use_prune):
    """Surface-batch losses and parameter gradients.

    Returns sums that the caller scales: the surface and prune parts are
    already divided by the batch size, the normal-alignment parts are raw
    sums over non-degenerate samples (count returned separately).
    """
    m, d = X.shape
    n_p = Ap.shape[0]
    n_m = Am.shape[0]

    pl_sur = np.zeros(CHUNKS)
    pl_norm = np.zeros(CHUNKS)
    pvalid = np.zeros(CHUNKS, np.int64)
    pskip = np.zeros(CHUNKS, np.int64)
    ppr_p = np.zeros(CHUNKS)
    ppr_m = np.zeros(CHUNKS)
    pdAp = np.zeros((CHUNKS, n_p, d))
    pdcp = np.zeros((CHUNKS, n_p))
    pdlsp = np.zeros((CHUNKS, n_p))
    pdAm = np.zeros((CHUNKS, n_m, d))
    pdcm = np.zeros((CHUNKS, n_m))
    pdlsm = np.zeros((CHUNKS, n_m))
    pdApn = np.zeros((CHUNKS, n_p, d))
    pdcpn = np.zeros((CHUNKS, n_p))
    pdlspn = np.zeros((CHUNKS, n_p))
    pdAmn = np.zeros((CHUNKS, n_m, d))
    pdcmn = np.zeros((CHUNKS, n_m))
    pdlsmn = np.zeros((CHUNKS, n_m))

    inv_m = 1.0 / m
    ApT = np.ascontiguousarray(Ap.T)
    AmT = np.ascontiguousarray(Am.T)
    for ch in prange(CHUNKS):
        j0 = ch * m // CHUNKS
        j1 = (ch + 1) * m // CHUNKS
        wp = np.empty(n_p)
        wm = np.empty(n_m)
        pbar = np.empty(d)
        mbar = np.empty(d)
        dldg = np.empty(d)
        for j in range(j0, j1):
            x = X[j]
            f, _, _ = _point_field(Ap, ApT, cp, lsp, Am, AmT, cm, lsm,
                                   bp, bm, x, d, wp, wm, pbar, mbar)

            coef = 0.0
            if use_sur:
                if f > 0.0:
                    sgn = 1.0
                elif f < 0.0:
                    sgn = -1.0
                else:
                    sgn = 0.0
                pl_sur[ch] += np.abs(f) * inv_m
                coef = sgn * inv_m

            normal_ok = False
            if use_normal:
                gn = 0.0
                for k in range(d):
                    gk = pbar[k] - mbar[k]
                    dldg[k] = gk
                    gn += gk * gk
                gn = np.sqrt(gn)
                if gn < 1e-12:
                    pskip[ch] += 1
                else:
                    cosv = 0.0
                    for k in range(d):
                        cosv += dldg[k] * U[j, k]
                    cosv /= gn
                    pl_norm[ch] += 1.0 - cosv
                    pvalid[ch] += 1
                    # d(1-cos)/dg = -(u - cos * g/|g|)/|g|
                    for k in range(d):
                        dldg[k] = -(U[j, k] - cosv * dldg[k] / gn) / gn
                    normal_ok = True

            rp_active = False
            rm_active = False
            if use_prune:
                acc = 0.0
                for i in range(n_p):
                    acc += sp_w[i] * wp[i]
                rp = 1.0 - acc
                if rp > 0.0:
                    ppr_p[ch] += rp * inv_m
                    rp_active = True
                acc = 0.0
                for i in range(n_m):
                    acc += sm_w[i] * wm[i]
                rm = 1.0 - acc
                if rm > 0.0:
                    ppr_m[ch] += rm * inv_m
                    rm_active = True

            dldg_pbar = 0.0
            dldg_mbar = 0.0
            if normal_ok:
                for k in range(d):
                    dldg_pbar += dldg[k] * pbar[k]
                    dldg_mbar += dldg[k] * mbar[k]

            for i in range(n_p):
                w = wp[i]
                if w == 0.0:
                    continue
                if coef != 0.0:
                    pdcp[ch, i] += coef * w
                    pdlsp[ch, i] += coef * w / bp
                    for k in range(d):
                        pdAp[ch, i, k] += coef * w * x[k]
                if normal_ok:
                    q = -dldg_pbar
                    for k in range(d):
                        q += dldg[k] * Ap[i, k]
                    pdcpn[ch, i] += bp * w * q
                    pdlspn[ch, i] += w * q
                    for k in range(d):
                        pdApn[ch, i, k] += w * dldg[k] + bp * w * q * x[k]
                if rp_active:
                    pdlsp[ch, i] -= sp_w[i] * w * inv_m
            for i in range(n_m):
                w = wm[i]
                if w == 0.0:
                    continue
                if coef != 0.0:
                    pdcm[ch, i] -= coef * w
                    pdlsm[ch, i] -= coef * w / bm
                    for k in range(d):
                        pdAm[ch, i, k] -= coef * w * x[k]
                if normal_ok:
                    q = -dldg_mbar
                    for k in range(d):
                        q += dldg[k] * Am[i, k]
                    pdcmn[ch, i] -= bm * w * q
                    pdlsmn[ch, i] -= w * q
                    for k in range(d):
                        pdAmn[ch, i, k] -= w * dldg[k] + bm * w * q * x[k]
                if rm_active:
                    pdlsm[ch, i] -= sm_w[i] * w * inv_m

    loss_sur = 0.0
    loss_norm = 0.0
    valid = 0
    skipped = 0
    pr_p = 0.0
    pr_m = 0.0
    dAp = np.zeros((n_p, d))
    dcp = np.zeros(n_p)
    dlsp = np.zeros(n_p)
    dAm = np.zeros((n_m, d))
    dcm = np.zeros(n_m)
    dlsm = np.zeros(n_m)
    dApn = np.zeros((n_p, d))
    dcpn = np.zeros(n_p)
    dlspn = np.zeros(n_p)
    dAmn = np.zeros((n_m, d))
    dcmn = np.zeros(n_m)
    dlsmn = np.zeros(n_m)
    for ch in range(CHUNKS):
        loss_sur += pl_sur[ch]
        loss_norm += pl_norm[ch]
        valid += pvalid[ch]
        skipped += pskip[ch]
        pr_p += ppr_p[ch]
        pr_m += ppr_m[ch]
        for i in range(n_p):
            dcp[i] += pdcp[ch, i]
            dlsp[i] += pdlsp[ch, i]
            dcpn[i] += pdcpn[ch, i]
            dlspn[i] += pdlspn[ch, i]
            for k in range(d):
                dAp[i, k] += pdAp[ch, i, k]
                dApn[i, k] += pdApn[ch, i, k]
        for i in range(n_m):
            dcm[i] += pdcm[ch, i]
            dlsm[i] += pdlsm[ch, i]
            dcmn[i] += pdcmn[ch, i]
            dlsmn[i] += pdlsmn[ch, i]
            for k in range(d):
                dAm[i, k] += pdAm[ch, i, k]
                dAmn[i, k] += pdAmn[ch, i, k]
    return (loss_sur, loss_norm, valid, skipped, pr_p, pr_m,
            dAp, dcp, dlsp, dAm, dcm, dlsm,
            dApn, dcpn, dlspn, dAmn, dcmn, dlsmn)


@njit(cache=True, parallel=True)
def _offsurface_kernel(Ap, cp, lsp, Am, cm, lsm, bp, bm, Y):
    """Occupancy regularizer: mean g(sigmoid(-F))^2 with the double-well g."""
    m, d = Y.shape
    n_p = Ap.shape[0]
    n_m = Am.shape[0]
    pl = np.zeros(CHUNKS)
    pdAp = np.zeros((CHUNKS, n_p, d))
    pdcp = np.zeros((CHUNKS, n_p))
    pdlsp = np.zeros((CHUNKS, n_p))
    pdAm = np.zeros((CHUNKS, n_m, d))
    pdcm = np.zeros((CHUNKS, n_m))
    pdlsm = np.zeros((CHUNKS, n_m))
    inv_m = 1.0 / m
    ApT = np.ascontiguousarray(Ap.T)
    AmT = np.ascontiguousarray(Am.T)
    for ch in prange(CHUNKS):
        j0 = ch * m // CHUNKS
        j1 = (ch + 1) * m // CHUNKS
        wp = np.empty(n_p)
        wm = np.empty(n_m)
        pbar = np.empty(d)
        mbar = np.empty(d)
        for j in range(j0, j1):
            y = Y[j]
            f, _, _ = _point_field(Ap, ApT, cp, lsp, Am, AmT, cm, lsm,
                                   bp, bm, y, d, wp, wm, pbar, mbar)
            # stable sigmoid(-f)
            if f >= 0.0:
                ef = np.exp(-f)
                t = ef / (1.0 + ef)
            else:
                t = 1.0 / (1.0 + np.exp(f))
            u = t - 0.5
            au = np.abs(u)
            gdw = 4.0 * u * u - 4.0 * au + 1.0
            pl[ch] += gdw * gdw * inv_m
            if u > 0.0:
                sgn_u = 1.0
            elif u < 0.0:
                sgn_u = -1.0
            else:
                sgn_u = 0.0
            dgdw = 8.0 * u - 4.0 * sgn_u
            coef = 2.0 * gdw * dgdw * (-(t * (1.0 - t))) * inv_m
            if coef != 0.0:
                for i in range(n_p):
                    w = wp[i]
                    if w == 0.0:
                        continue
                    pdcp[ch, i] += coef * w
                    pdlsp[ch, i] += coef * w / bp
                    for k in range(d):
                        pdAp[ch, i, k] += coef * w * y[k]
                for i in range(n_m):
                    w = wm[i]
                    if w == 0.0:
                        continue
                    pdcm[ch, i] -= coef * w
                    pdlsm[ch, i] -= coef * w / bm
                    for k in range(d):
                        pdAm[ch, i, k] -= coef * w * y[k]
    loss = 0.0
    dAp = np.zeros((n_p, d))
    dcp = np.zeros(n_p)
    dlsp = np.zeros(n_p)
    dAm = np.zeros((n_m, d))
    dcm = np.zeros(n_m)
    dlsm = np.zeros(n_m)
    for ch in range(CHUNKS):
        loss += pl[ch]
        for i in range(n_p):
            dcp[i] += pdcp[ch, i]
            dlsp[i] += pdlsp[ch, i]
            for k in range(d):
                dAp[i, k] += pdAp[ch, i, k]
        for i in range(n_m):
            dcm[i] += pdcm[ch, i]
            dlsm[i] += pdlsm[ch, i]
            for k in range(d):
                dAm[i, k] += pdAm[ch, i, k]
    return loss, dAp, dcp, dlsp, dAm, dcm, dlsm


def _compact(model: PatchworkModel):
    """Active-term arrays per group plus the index maps back to full order."""
    idx_p = model.group_indices(PLUS)
    idx_m = model.group_indices(MINUS)
    if idx_p.size == 0 or idx_m.size == 0:
        raise EmptyInput("compiled kernels need at least one active term per group")
    return (idx_p, idx_m,
            np.ascontiguousarray(model.a[idx_p]), np.ascontiguousarray(model.c[idx_p]),
            np.ascontiguousarray(model.log_s[idx_p]),
            np.ascontiguousarray(model.a[idx_m]), np.ascontiguousarray(model.c[idx_m]),
            np.ascontiguousarray(model.log_s[idx_m]))


def field_values(model: PatchworkModel, points: np.ndarray) -> np.ndarray:
    _, _, Ap, cp, lsp, Am, cm, lsm = _compact(model)
    values, _ = _values_kernel(Ap, cp, lsp, Am, cm, lsm,
                               model.beta_plus, model.beta_minus,
                               np.ascontiguousarray(points, dtype=np.float64))
    return values


def field_values_grads(model: PatchworkModel, points: np.ndarray):
    _, _, Ap, cp, lsp, Am, cm, lsm = _compact(model)
    return _values_kernel(Ap, cp, lsp, Am, cm, lsm,
                          model.beta_plus, model.beta_minus,
                          np.ascontiguousarray(points, dtype=np.float64))
