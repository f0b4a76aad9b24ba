"""Compiled inner loops for chain inference.

Sequential message passing over T ~ 1e5 steps with tiny matrices is the hot
path; these kernels run it in nopython mode.  Cholesky factorizations are
hand-rolled so that positive-definiteness failures surface as an ``ok``
flag instead of an exception (callers translate the flag into
ImproperMessage).

The Gaussian chain convention matches gaussians.py: a potential is
exp(<h, y> + y' J y), i.e. precision = -2 J.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True, inline="always")
def _chol(a, low):
    """In-place Cholesky of ``a`` into ``low``; False if a pivot <= 0."""
    d = a.shape[0]
    for i in range(d):
        for j in range(d):
            low[i, j] = 0.0
    for i in range(d):
        for j in range(i + 1):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            if i == j:
                if acc <= 0.0:
                    return False
                low[i, i] = np.sqrt(acc)
            else:
                low[i, j] = acc / low[j, j]
    return True


@njit(cache=True, inline="always")
def _chol_solve_vec(low, b, x):
    """Solve (L L') x = b given the Cholesky factor L."""
    d = low.shape[0]
    for i in range(d):
        acc = b[i]
        for k in range(i):
            acc -= low[i, k] * x[k]
        x[i] = acc / low[i, i]
    for i in range(d - 1, -1, -1):
        acc = x[i]
        for k in range(i + 1, d):
            acc -= low[k, i] * x[k]
        x[i] = acc / low[i, i]


@njit(cache=True, inline="always")
def _chol_solve_mat(low, bmat, xmat, tmp):
    d, m = bmat.shape
    for j in range(m):
        for i in range(d):
            tmp[i] = bmat[i, j]
        _chol_solve_vec(low, tmp, tmp)
        for i in range(d):
            xmat[i, j] = tmp[i]


@njit(cache=True, inline="always")
def _logdet_from_chol(low):
    acc = 0.0
    for i in range(low.shape[0]):
        acc += np.log(low[i, i])
    return 2.0 * acc


@njit(cache=True)
def hmm_forward_backward(log_init, log_trans, rho):
    """Exact log-space forward-backward over node potentials ``rho``.

    Chain potentials: log_init + rho[0] at t=0, log_trans[l, k] + rho[t, k]
    per transition.  Returns (gamma, xi, log_z) with xi[t] the joint of
    (u_t, u_{t+1}).
    """
    T, K = rho.shape
    alpha = np.empty((T, K))
    beta = np.empty((T, K))
    for k in range(K):
        alpha[0, k] = log_init[k] + rho[0, k]
    for t in range(1, T):
        for k in range(K):
            mx = -np.inf
            for l in range(K):
                val = alpha[t - 1, l] + log_trans[l, k]
                if val > mx:
                    mx = val
            acc = 0.0
            for l in range(K):
                acc += np.exp(alpha[t - 1, l] + log_trans[l, k] - mx)
            alpha[t, k] = rho[t, k] + mx + np.log(acc)
    mx = -np.inf
    for k in range(K):
        if alpha[T - 1, k] > mx:
            mx = alpha[T - 1, k]
    acc = 0.0
    for k in range(K):
        acc += np.exp(alpha[T - 1, k] - mx)
    log_z = mx + np.log(acc)

    for k in range(K):
        beta[T - 1, k] = 0.0
    for t in range(T - 2, -1, -1):
        for l in range(K):
            mx = -np.inf
            for k in range(K):
                val = log_trans[l, k] + rho[t + 1, k] + beta[t + 1, k]
                if val > mx:
                    mx = val
            acc = 0.0
            for k in range(K):
                acc += np.exp(log_trans[l, k] + rho[t + 1, k] + beta[t + 1, k] - mx)
            beta[t, l] = mx + np.log(acc)

    gamma = np.empty((T, K))
    for t in range(T):
        mx = -np.inf
        for k in range(K):
            val = alpha[t, k] + beta[t, k]
            if val > mx:
                mx = val
        acc = 0.0
        for k in range(K):
            acc += np.exp(alpha[t, k] + beta[t, k] - mx)
        norm = mx + np.log(acc)
        for k in range(K):
            gamma[t, k] = np.exp(alpha[t, k] + beta[t, k] - norm)

    xi = np.empty((max(T - 1, 0), K, K))
    for t in range(T - 1):
        mx = -np.inf
        for l in range(K):
            for k in range(K):
                val = (
                    alpha[t, l]
                    + log_trans[l, k]
                    + rho[t + 1, k]
                    + beta[t + 1, k]
                )
                if val > mx:
                    mx = val
        acc = 0.0
        for l in range(K):
            for k in range(K):
                acc += np.exp(
                    alpha[t, l] + log_trans[l, k] + rho[t + 1, k] + beta[t + 1, k] - mx
                )
        for l in range(K):
            for k in range(K):
                xi[t, l, k] = (
                    np.exp(
                        alpha[t, l]
                        + log_trans[l, k]
                        + rho[t + 1, k]
                        + beta[t + 1, k]
                        - mx
                    )
                    / acc
                )
    return gamma, xi, log_z


@njit(cache=True)
def gaussian_chain_smoother(h_init, J_init, h_surr, J_surr, h_pair, J_pair):
    """Two-filter smoothing of a Gaussian chain in natural parameters.

    Node t carries the surrogate potential (h_surr[t], J_surr[t]); node 0
    additionally carries the blended initial potential (h_init, J_init);
    the transition t-1 -> t carries the blended pair potential
    (h_pair[t-1], J_pair[t-1]) over the stacked (y_{t-1}, y_t).

    Returns
    -------
    ok : False as soon as any eliminated block is not positive definite.
    means, covs : smoothed marginals, (T, d) and (T, d, d).
    cross : Cov(y_t, y_{t+1}), shape (T-1, d, d).
    log_z : log-partition of the Gaussian part of the chain.
    h_cav, J_cav : per-node cavity (all potentials except node t's
        surrogate), used for local reparameterized sampling.
    """
    T, d = h_surr.shape
    pre_h = np.zeros((T, d))
    pre_J = np.zeros((T, d, d))
    m_h = np.zeros((T, d))
    m_J = np.zeros((T, d, d))
    b_h = np.zeros((T, d))
    b_J = np.zeros((T, d, d))
    means = np.zeros((T, d))
    covs = np.zeros((T, d, d))
    cross = np.zeros((max(T - 1, 0), d, d))
    h_cav = np.zeros((T, d))
    J_cav = np.zeros((T, d, d))

    low = np.zeros((d, d))
    amat = np.zeros((d, d))
    vec = np.zeros(d)
    vec2 = np.zeros(2 * d)
    sol = np.zeros(d)
    solm = np.zeros((d, d))
    solm_in = np.zeros((d, d))

    log_z = 0.0
    failed = False

    # forward: pre = message into node t from the past, m = pre + node
    for j in range(d):
        pre_h[0, j] = h_init[j]
        m_h[0, j] = h_init[j] + h_surr[0, j]
        for jj in range(d):
            pre_J[0, j, jj] = J_init[j, jj]
            m_J[0, j, jj] = J_init[j, jj] + J_surr[0, j, jj]
    for t in range(1, T):
        # A = -2 (J_pair^11 + m_J[t-1])
        for i in range(d):
            for j in range(d):
                amat[i, j] = -2.0 * (J_pair[t - 1, i, j] + m_J[t - 1, i, j])
        for i in range(d):
            for j in range(i):
                s = 0.5 * (amat[i, j] + amat[j, i])
                amat[i, j] = s
                amat[j, i] = s
        if not _chol(amat, low):
            failed = True
            break
        for i in range(d):
            vec[i] = h_pair[t - 1, i] + m_h[t - 1, i]
        _chol_solve_vec(low, vec, sol)
        # quadratic block solve: A^-1 J12
        for i in range(d):
            for j in range(d):
                solm_in[i, j] = J_pair[t - 1, i, d + j]
        _chol_solve_mat(low, solm_in, solm, vec2[:d])
        # marginalized potential on y_t
        for i in range(d):
            acc = h_pair[t - 1, d + i]
            for j in range(d):
                acc += 2.0 * J_pair[t - 1, j, d + i] * sol[j]
            pre_h[t, i] = acc
            m_h[t, i] = acc + h_surr[t, i]
        for i in range(d):
            for j in range(d):
                acc = J_pair[t - 1, d + i, d + j]
                for k in range(d):
                    acc += 2.0 * J_pair[t - 1, k, d + i] * solm[k, j]
                pre_J[t, i, j] = acc
        for i in range(d):
            for j in range(i + 1):
                s = 0.5 * (pre_J[t, i, j] + pre_J[t, j, i])
                pre_J[t, i, j] = s
                pre_J[t, j, i] = s
        for i in range(d):
            for j in range(d):
                m_J[t, i, j] = pre_J[t, i, j] + J_surr[t, i, j]
        quad = 0.0
        for i in range(d):
            quad += vec[i] * sol[i]
        log_z += 0.5 * quad + 0.5 * (d * LOG_2PI - _logdet_from_chol(low))

    if not failed:
        # final normalizer of the last forward message
        for i in range(d):
            for j in range(d):
                amat[i, j] = -2.0 * m_J[T - 1, i, j]
        if not _chol(amat, low):
            failed = True
        else:
            for i in range(d):
                vec[i] = m_h[T - 1, i]
            _chol_solve_vec(low, vec, sol)
            quad = 0.0
            for i in range(d):
                quad += vec[i] * sol[i]
            log_z += 0.5 * quad + 0.5 * (d * LOG_2PI - _logdet_from_chol(low))

    if not failed:
        # backward: b = message into node t from the future (excl. node t)
        for t in range(T - 2, -1, -1):
            for i in range(d):
                for j in range(d):
                    amat[i, j] = -2.0 * (
                        J_pair[t, d + i, d + j] + J_surr[t + 1, i, j] + b_J[t + 1, i, j]
                    )
            for i in range(d):
                for j in range(i):
                    s = 0.5 * (amat[i, j] + amat[j, i])
                    amat[i, j] = s
                    amat[j, i] = s
            if not _chol(amat, low):
                failed = True
                break
            for i in range(d):
                vec[i] = h_pair[t, d + i] + h_surr[t + 1, i] + b_h[t + 1, i]
            _chol_solve_vec(low, vec, sol)
            for i in range(d):
                for j in range(d):
                    solm_in[i, j] = J_pair[t, d + i, j]
            _chol_solve_mat(low, solm_in, solm, vec2[:d])
            for i in range(d):
                acc = h_pair[t, i]
                for j in range(d):
                    acc += 2.0 * J_pair[t, d + j, i] * sol[j]
                b_h[t, i] = acc
            for i in range(d):
                for j in range(d):
                    acc = J_pair[t, i, j]
                    for k in range(d):
                        acc += 2.0 * J_pair[t, d + k, i] * solm[k, j]
                    b_J[t, i, j] = acc
            for i in range(d):
                for j in range(i + 1):
                    s = 0.5 * (b_J[t, i, j] + b_J[t, j, i])
                    b_J[t, i, j] = s
                    b_J[t, j, i] = s

    if not failed:
        # marginals and cavities
        for t in range(T):
            for i in range(d):
                h_cav[t, i] = pre_h[t, i] + b_h[t, i]
                for j in range(d):
                    J_cav[t, i, j] = pre_J[t, i, j] + b_J[t, i, j]
            for i in range(d):
                for j in range(d):
                    amat[i, j] = -2.0 * (J_cav[t, i, j] + J_surr[t, i, j])
            if not _chol(amat, low):
                failed = True
                break
            for j in range(d):
                for i in range(d):
                    vec[i] = 1.0 if i == j else 0.0
                _chol_solve_vec(low, vec, sol)
                for i in range(d):
                    covs[t, i, j] = sol[i]
            for i in range(d):
                for j in range(i):
                    s = 0.5 * (covs[t, i, j] + covs[t, j, i])
                    covs[t, i, j] = s
                    covs[t, j, i] = s
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += covs[t, i, j] * (h_cav[t, j] + h_surr[t, j])
                means[t, i] = acc

    if not failed:
        # cross-covariance via the pair joint's block inverse:
        # Cov(y_t, y_{t+1}) = -A11^{-1} A12 Cov(y_{t+1}), where A is the
        # pair precision with everything <= t folded into the first block
        for t in range(T - 1):
            for i in range(d):
                for j in range(d):
                    amat[i, j] = -2.0 * (J_pair[t, i, j] + m_J[t, i, j])
            for i in range(d):
                for j in range(i):
                    s = 0.5 * (amat[i, j] + amat[j, i])
                    amat[i, j] = s
                    amat[j, i] = s
            if not _chol(amat, low):
                failed = True
                break
            for i in range(d):
                for j in range(d):
                    solm_in[i, j] = -2.0 * J_pair[t, i, d + j]
            _chol_solve_mat(low, solm_in, solm, vec)
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for k in range(d):
                        acc -= solm[i, k] * covs[t + 1, k, j]
                    cross[t, i, j] = acc

    ok = not failed
    return ok, means, covs, cross, log_z, h_cav, J_cav


@njit(cache=True)
def gaussian_chain_smoother_d2(h_init, J_init, h_surr, J_surr_w, h_pair, J_pair):
    """Unrolled d=2 smoother for lifted surrogates.

    Assumes the node potentials touch only the observable coordinate:
    h_surr[:, 1] == 0 and the quadratic term is the scalar J_surr_w at
    (0, 0).  Symmetric 2x2 blocks are packed as (a11, a12, a22); outputs
    match gaussian_chain_smoother to rounding.
    """
    T = h_surr.shape[0]
    pre_h = np.zeros((T, 2)); pre_J = np.zeros((T, 3))  # packed sym: a11,a12,a22
    m_h = np.zeros((T, 2)); m_J = np.zeros((T, 3))
    b_h = np.zeros((T, 2)); b_J = np.zeros((T, 3))
    means = np.zeros((T, 2)); covs = np.zeros((T, 2, 2))
    cross = np.zeros((T - 1, 2, 2))
    h_cav = np.zeros((T, 2)); J_cav = np.zeros((T, 3))
    log_z = 0.0
    pre_h[0, 0] = h_init[0]; pre_h[0, 1] = h_init[1]
    pre_J[0, 0] = J_init[0, 0]; pre_J[0, 1] = 0.5*(J_init[0,1]+J_init[1,0]); pre_J[0, 2] = J_init[1, 1]
    m_h[0, 0] = pre_h[0, 0] + h_surr[0, 0]; m_h[0, 1] = pre_h[0, 1]
    m_J[0, 0] = pre_J[0, 0] + J_surr_w[0]; m_J[0, 1] = pre_J[0, 1]; m_J[0, 2] = pre_J[0, 2]
    ok = True
    for t in range(1, T):
        # A = -2(Jp11 + m_J[t-1]) sym 2x2
        a11 = -2.0 * (J_pair[t-1, 0, 0] + m_J[t-1, 0])
        a12 = -2.0 * (0.5*(J_pair[t-1, 0, 1] + J_pair[t-1, 1, 0]) + m_J[t-1, 1])
        a22 = -2.0 * (J_pair[t-1, 1, 1] + m_J[t-1, 2])
        det = a11 * a22 - a12 * a12
        if a11 <= 0.0 or det <= 0.0:
            ok = False; break
        i11 = a22 / det; i12 = -a12 / det; i22 = a11 / det
        hv0 = h_pair[t-1, 0] + m_h[t-1, 0]; hv1 = h_pair[t-1, 1] + m_h[t-1, 1]
        s0 = i11 * hv0 + i12 * hv1; s1 = i12 * hv0 + i22 * hv1
        # J12 block: rows prev, cols cur
        c00 = J_pair[t-1, 0, 2]; c01 = J_pair[t-1, 0, 3]
        c10 = J_pair[t-1, 1, 2]; c11 = J_pair[t-1, 1, 3]
        # Ainv @ J12
        q00 = i11 * c00 + i12 * c10; q01 = i11 * c01 + i12 * c11
        q10 = i12 * c00 + i22 * c10; q11 = i12 * c01 + i22 * c11
        ph0 = h_pair[t-1, 2] + 2.0 * (c00 * s0 + c10 * s1)
        ph1 = h_pair[t-1, 3] + 2.0 * (c01 * s0 + c11 * s1)
        pj00 = J_pair[t-1, 2, 2] + 2.0 * (c00 * q00 + c10 * q10)
        pj01 = 0.5*(J_pair[t-1, 2, 3]+J_pair[t-1,3,2]) + (c00 * q01 + c10 * q11) + (c01 * q00 + c11 * q10)
        pj11 = J_pair[t-1, 3, 3] + 2.0 * (c01 * q01 + c11 * q11)
        pre_h[t, 0] = ph0; pre_h[t, 1] = ph1
        pre_J[t, 0] = pj00; pre_J[t, 1] = pj01; pre_J[t, 2] = pj11
        m_h[t, 0] = ph0 + h_surr[t, 0]; m_h[t, 1] = ph1
        m_J[t, 0] = pj00 + J_surr_w[t]; m_J[t, 1] = pj01; m_J[t, 2] = pj11
        log_z += 0.5 * (hv0 * s0 + hv1 * s1) + LOG_2PI - 0.5 * np.log(det)
    if ok:
        a11 = -2.0 * m_J[T-1, 0]; a12 = -2.0 * m_J[T-1, 1]; a22 = -2.0 * m_J[T-1, 2]
        det = a11 * a22 - a12 * a12
        if a11 <= 0.0 or det <= 0.0:
            ok = False
        else:
            i11 = a22/det; i12 = -a12/det; i22 = a11/det
            hv0 = m_h[T-1,0]; hv1 = m_h[T-1,1]
            log_z += 0.5*(hv0*(i11*hv0+i12*hv1) + hv1*(i12*hv0+i22*hv1)) + LOG_2PI - 0.5*np.log(det)
    if ok:
        for tt in range(T - 1):
            t = T - 2 - tt
            a11 = -2.0 * (J_pair[t, 2, 2] + J_surr_w[t+1] + b_J[t+1, 0])
            a12 = -2.0 * (0.5*(J_pair[t, 2, 3]+J_pair[t,3,2]) + b_J[t+1, 1])
            a22 = -2.0 * (J_pair[t, 3, 3] + b_J[t+1, 2])
            det = a11 * a22 - a12 * a12
            if a11 <= 0.0 or det <= 0.0:
                ok = False; break
            i11 = a22/det; i12 = -a12/det; i22 = a11/det
            hv0 = h_pair[t, 2] + h_surr[t+1, 0] + b_h[t+1, 0]
            hv1 = h_pair[t, 3] + b_h[t+1, 1]
            s0 = i11*hv0 + i12*hv1; s1 = i12*hv0 + i22*hv1
            # J21 block (rows cur, cols prev) = J_pair[2:,0:2]
            c00 = J_pair[t, 2, 0]; c01 = J_pair[t, 2, 1]
            c10 = J_pair[t, 3, 0]; c11 = J_pair[t, 3, 1]
            q00 = i11*c00 + i12*c10; q01 = i11*c01 + i12*c11
            q10 = i12*c00 + i22*c10; q11 = i12*c01 + i22*c11
            b_h[t, 0] = h_pair[t, 0] + 2.0*(c00*s0 + c10*s1)
            b_h[t, 1] = h_pair[t, 1] + 2.0*(c01*s0 + c11*s1)
            b_J[t, 0] = J_pair[t, 0, 0] + 2.0*(c00*q00 + c10*q10)
            b_J[t, 1] = 0.5*(J_pair[t,0,1]+J_pair[t,1,0]) + (c00*q01 + c10*q11 + c01*q00 + c11*q10)
            b_J[t, 2] = J_pair[t, 1, 1] + 2.0*(c01*q01 + c11*q11)
    if ok:
        for t in range(T):
            hc0 = pre_h[t,0] + b_h[t,0]; hc1 = pre_h[t,1] + b_h[t,1]
            jc0 = pre_J[t,0] + b_J[t,0]; jc1 = pre_J[t,1] + b_J[t,1]; jc2 = pre_J[t,2] + b_J[t,2]
            h_cav[t,0] = hc0; h_cav[t,1] = hc1
            J_cav[t,0] = jc0; J_cav[t,1] = jc1; J_cav[t,2] = jc2
            a11 = -2.0*(jc0 + J_surr_w[t]); a12 = -2.0*jc1; a22 = -2.0*jc2
            det = a11*a22 - a12*a12
            if a11 <= 0.0 or det <= 0.0:
                ok = False; break
            covs[t,0,0] = a22/det; covs[t,0,1] = -a12/det; covs[t,1,0] = -a12/det; covs[t,1,1] = a11/det
            hm0 = hc0 + h_surr[t,0]; hm1 = hc1
            means[t,0] = covs[t,0,0]*hm0 + covs[t,0,1]*hm1
            means[t,1] = covs[t,1,0]*hm0 + covs[t,1,1]*hm1
    if ok:
        for t in range(T-1):
            a11 = -2.0*(J_pair[t,0,0] + m_J[t,0]); a12 = -2.0*(0.5*(J_pair[t,0,1]+J_pair[t,1,0]) + m_J[t,1]); a22 = -2.0*(J_pair[t,1,1] + m_J[t,2])
            det = a11*a22 - a12*a12
            if a11 <= 0.0 or det <= 0.0:
                ok = False; break
            i11 = a22/det; i12 = -a12/det; i22 = a11/det
            b00 = -2.0*J_pair[t,0,2]; b01 = -2.0*J_pair[t,0,3]
            b10 = -2.0*J_pair[t,1,2]; b11 = -2.0*J_pair[t,1,3]
            q00 = i11*b00 + i12*b10; q01 = i11*b01 + i12*b11
            q10 = i12*b00 + i22*b10; q11 = i12*b01 + i22*b11
            cross[t,0,0] = -(q00*covs[t+1,0,0] + q01*covs[t+1,1,0])
            cross[t,0,1] = -(q00*covs[t+1,0,1] + q01*covs[t+1,1,1])
            cross[t,1,0] = -(q10*covs[t+1,0,0] + q11*covs[t+1,1,0])
            cross[t,1,1] = -(q10*covs[t+1,0,1] + q11*covs[t+1,1,1])
    return ok, means, covs, cross, log_z, h_cav, J_cav
