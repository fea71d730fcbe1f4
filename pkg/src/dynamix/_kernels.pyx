# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures and semantics match ``dynamix._reference``."""
import numpy as np
from libc.math cimport exp, fabs, INFINITY

BACKEND = "compiled"


cdef inline double _sgn(double x) noexcept nogil:
    return <double>(x > 0) - <double>(x < 0)


cdef inline void _softmax(double[::1] x, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double mx = -INFINITY, s = 0.0
    for i in range(n):
        if x[i] > mx:
            mx = x[i]
    for i in range(n):
        x[i] = exp(x[i] - mx)
        s += x[i]
    for i in range(n):
        x[i] /= s


def forecast_loop(double[:, ::1] A, double[:, :, ::1] W, double[:, ::1] h, int P,
                  double[:, ::1] D, double t_att, double t_exp, double sign,
                  double[:, ::1] w1, double[::1] b1, double[:, ::1] w2, double[::1] b2,
                  double[:, ::1] C, double[:, ::1] Ct, z0, Py_ssize_t n_total):
    cdef Py_ssize_t J = A.shape[0], M = A.shape[1], N = C.shape[0], T = C.shape[1]
    cdef Py_ssize_t H = w1.shape[0], lin = M - P
    cdef Py_ssize_t k, i, m, t, j, c, q
    cdef double acc, wj
    Z_arr = np.empty((n_total, M))
    Wt_arr = np.empty((n_total, J))
    cdef double[:, ::1] Z = Z_arr
    cdef double[:, ::1] Wt = Wt_arr
    cdef double[::1] z = np.array(z0, dtype=np.float64)
    cdef double[::1] zn = np.empty(M)
    cdef double[::1] phi = np.empty(M)
    cdef double[::1] y = np.empty(N)
    cdef double[::1] a = np.empty(T)
    cdef double[::1] f = np.empty(N)
    cdef double[::1] hid = np.empty(H)
    cdef double[::1] w = np.empty(J)
    cdef double inv_att = sign / t_att
    cdef double inv_exp = 1.0 / t_exp

    with nogil:
        for k in range(n_total):
            for i in range(N):
                acc = 0.0
                for m in range(M):
                    acc = acc + D[i, m] * z[m]
                y[i] = acc
            for t in range(T):
                a[t] = 0.0
            for i in range(N):
                acc = y[i]
                for t in range(T):
                    a[t] = a[t] + fabs(C[i, t] - acc)
            for t in range(T):
                a[t] = a[t] * inv_att
            _softmax(a, T)
            for i in range(N):
                acc = 0.0
                for t in range(T):
                    acc = acc + Ct[i, t] * a[t]
                f[i] = acc
            for q in range(H):
                acc = b1[q]
                for i in range(N):
                    acc = acc + w1[q, i] * f[i]
                for m in range(M):
                    acc = acc + w1[q, N + m] * z[m]
                hid[q] = acc if acc > 0 else 0.0
            for j in range(J):
                acc = b2[j]
                for q in range(H):
                    acc = acc + w2[j, q] * hid[q]
                w[j] = acc * inv_exp
            _softmax(w, J)
            for m in range(M):
                if m < lin or z[m] > 0:
                    phi[m] = z[m]
                else:
                    phi[m] = 0.0
                zn[m] = 0.0
            for j in range(J):
                wj = w[j]
                for m in range(M):
                    acc = A[j, m] * z[m] + h[j, m]
                    for c in range(M):
                        acc = acc + W[j, m, c] * phi[c]
                    zn[m] = zn[m] + wj * acc
            for m in range(M):
                z[m] = zn[m]
                Z[k, m] = zn[m]
            for j in range(J):
                Wt[k, j] = w[j]
    return Z_arr, Wt_arr


def stf_batch(double[:, ::1] A, double[:, :, ::1] W, double[:, ::1] h, int P,
              double[:, ::1] D, double t_att, double t_exp, double sign,
              double[:, ::1] w1, double[::1] b1, double[:, ::1] w2, double[::1] b2,
              double[:, ::1] L, X_in, Ct_in, Py_ssize_t s0, Py_ssize_t tau,
              xi_in, sqrt_sigma_in, bint want_grad):
    cdef double[:, :, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef double[:, :, ::1] Ct = np.ascontiguousarray(Ct_in, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], N = X.shape[1], S = X.shape[2], T = Ct.shape[2]
    cdef Py_ssize_t J = A.shape[0], M = A.shape[1], H = w1.shape[0], NM = N + M
    cdef Py_ssize_t K = S - 1 - s0, lin = M - P
    cdef bint has_noise = xi_in is not None
    cdef double[:, :, ::1] xi = (np.ascontiguousarray(xi_in, dtype=np.float64)
                                 if has_noise else np.zeros((1, 1, 1)))
    cdef double[::1] ss = np.ascontiguousarray(sqrt_sigma_in, dtype=np.float64)
    cdef double inv_att = sign / t_att
    cdef Py_ssize_t b, k, i, m, t, j, c, q
    cdef double acc, e, mx, s, wj, g, dot

    sse_arr = np.zeros(B)
    pred_arr = np.empty((B, N, K))
    states_arr = np.empty((B, K, M))
    cdef double[::1] sse = sse_arr
    cdef double[:, :, ::1] pred = pred_arr
    cdef double[:, :, ::1] states = states_arr

    cdef double[:, ::1] U = np.empty((K, M))
    cdef double[:, ::1] PHI = np.empty((K, M))
    cdef double[:, ::1] Y = np.empty((K, N))
    cdef double[:, ::1] R = np.empty((K, T))
    cdef double[:, ::1] AT = np.empty((K, T))
    cdef double[:, ::1] V = np.empty((K, NM))
    cdef double[:, ::1] HP = np.empty((K, H))
    cdef double[:, ::1] Q = np.empty((K, J))
    cdef double[:, ::1] WW = np.empty((K, J))
    cdef double[:, :, ::1] ZJ = np.empty((K, J, M))
    cdef double[:, ::1] ERR = np.empty((K, N))
    cdef double[::1] z = np.empty(M)

    gA_arr = np.zeros((J, M)); gW_arr = np.zeros((J, M, M)); gh_arr = np.zeros((J, M))
    gD_arr = np.zeros((N, M)); gw1_arr = np.zeros((H, NM)); gb1_arr = np.zeros(H)
    gw2_arr = np.zeros((J, H)); gb2_arr = np.zeros(J); gL_arr = np.zeros((M - N, N))
    gss_arr = np.zeros(N)
    gCt_arr = np.zeros((B, N, T)) if want_grad else np.zeros((1, 1, 1))
    cdef double[:, ::1] gA = gA_arr
    cdef double[:, :, ::1] gW = gW_arr
    cdef double[:, ::1] gh = gh_arr
    cdef double[:, ::1] gD = gD_arr
    cdef double[:, ::1] gw1 = gw1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gw2 = gw2_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[:, ::1] gL = gL_arr
    cdef double[::1] gss = gss_arr
    cdef double[:, :, ::1] gCt = gCt_arr
    cdef double gTa = 0.0, gTe = 0.0
    cdef double[::1] gz = np.empty(M)
    cdef double[::1] gu = np.empty(M)
    cdef double[::1] gphi = np.empty(M)
    cdef double[::1] gw = np.empty(J)
    cdef double[::1] go = np.empty(J)
    cdef double[::1] gv = np.empty(NM)
    cdef double[::1] ga = np.empty(T)
    cdef double[::1] gy = np.empty(N)

    with nogil:
        for b in range(B):
            # ---- forward
            for i in range(N):
                z[i] = X[b, i, s0]
            for m in range(M - N):
                acc = 0.0
                for i in range(N):
                    acc = acc + L[m, i] * X[b, i, s0]
                z[N + m] = acc
            for k in range(K):
                for m in range(M):
                    U[k, m] = z[m]
                if k > 0 and k % tau == 0:
                    for i in range(N):
                        U[k, i] = X[b, i, s0 + k]
                for m in range(M):
                    states[b, k, m] = U[k, m]
                for i in range(N):
                    acc = 0.0
                    for m in range(M):
                        acc = acc + D[i, m] * U[k, m]
                    if has_noise:
                        acc = acc + ss[i] * xi[b, k, i]
                    Y[k, i] = acc
                for t in range(T):
                    R[k, t] = 0.0
                for i in range(N):
                    e = Y[k, i]
                    for t in range(T):
                        R[k, t] = R[k, t] + fabs(X[b, i, t] - e)
                mx = -INFINITY
                for t in range(T):
                    R[k, t] = R[k, t] * inv_att
                    if R[k, t] > mx:
                        mx = R[k, t]
                s = 0.0
                for t in range(T):
                    e = exp(R[k, t] - mx)
                    AT[k, t] = e
                    s = s + e
                for t in range(T):
                    AT[k, t] = AT[k, t] / s
                for i in range(N):
                    acc = 0.0
                    for t in range(T):
                        acc = acc + Ct[b, i, t] * AT[k, t]
                    V[k, i] = acc
                for m in range(M):
                    V[k, N + m] = U[k, m]
                for q in range(H):
                    acc = b1[q]
                    for c in range(NM):
                        acc = acc + w1[q, c] * V[k, c]
                    HP[k, q] = acc
                mx = -INFINITY
                for j in range(J):
                    acc = b2[j]
                    for q in range(H):
                        if HP[k, q] > 0:
                            acc = acc + w2[j, q] * HP[k, q]
                    Q[k, j] = acc / t_exp
                    if Q[k, j] > mx:
                        mx = Q[k, j]
                s = 0.0
                for j in range(J):
                    e = exp(Q[k, j] - mx)
                    WW[k, j] = e
                    s = s + e
                for j in range(J):
                    WW[k, j] = WW[k, j] / s
                for m in range(M):
                    if m < lin or U[k, m] > 0:
                        PHI[k, m] = U[k, m]
                    else:
                        PHI[k, m] = 0.0
                    z[m] = 0.0
                for j in range(J):
                    wj = WW[k, j]
                    for m in range(M):
                        acc = A[j, m] * U[k, m] + h[j, m]
                        for c in range(M):
                            acc = acc + W[j, m, c] * PHI[k, c]
                        ZJ[k, j, m] = acc
                        z[m] = z[m] + wj * acc
                for i in range(N):
                    e = z[i] - X[b, i, s0 + k + 1]
                    ERR[k, i] = e
                    sse[b] = sse[b] + e * e
                    pred[b, i, k] = z[i]

            if not want_grad:
                continue

            # ---- reverse
            for m in range(M):
                gz[m] = 0.0
            for k in range(K - 1, -1, -1):
                for i in range(N):
                    gz[i] = gz[i] + 2.0 * ERR[k, i]
                for j in range(J):
                    acc = 0.0
                    for m in range(M):
                        acc = acc + gz[m] * ZJ[k, j, m]
                    gw[j] = acc
                for m in range(M):
                    gu[m] = 0.0
                    gphi[m] = 0.0
                for j in range(J):
                    wj = WW[k, j]
                    for m in range(M):
                        g = wj * gz[m]
                        gA[j, m] = gA[j, m] + g * U[k, m]
                        gh[j, m] = gh[j, m] + g
                        gu[m] = gu[m] + A[j, m] * g
                        for c in range(M):
                            gW[j, m, c] = gW[j, m, c] + g * PHI[k, c]
                            gphi[c] = gphi[c] + W[j, m, c] * g
                for m in range(M):
                    if m < lin or U[k, m] > 0:
                        gu[m] = gu[m] + gphi[m]

                dot = 0.0
                for j in range(J):
                    dot = dot + WW[k, j] * gw[j]
                for j in range(J):
                    g = WW[k, j] * (gw[j] - dot)
                    gTe = gTe - g * Q[k, j] / t_exp
                    go[j] = g / t_exp
                    gb2[j] = gb2[j] + go[j]
                    for q in range(H):
                        if HP[k, q] > 0:
                            gw2[j, q] = gw2[j, q] + go[j] * HP[k, q]
                for c in range(NM):
                    gv[c] = 0.0
                for q in range(H):
                    if HP[k, q] <= 0:
                        continue
                    acc = 0.0
                    for j in range(J):
                        acc = acc + go[j] * w2[j, q]
                    gb1[q] = gb1[q] + acc
                    for c in range(NM):
                        gw1[q, c] = gw1[q, c] + acc * V[k, c]
                        gv[c] = gv[c] + acc * w1[q, c]
                for m in range(M):
                    gu[m] = gu[m] + gv[N + m]

                for t in range(T):
                    ga[t] = 0.0
                for i in range(N):
                    g = gv[i]
                    for t in range(T):
                        ga[t] = ga[t] + Ct[b, i, t] * g
                        gCt[b, i, t] = gCt[b, i, t] + g * AT[k, t]
                dot = 0.0
                for t in range(T):
                    dot = dot + AT[k, t] * ga[t]
                acc = 0.0
                for t in range(T):
                    g = AT[k, t] * (ga[t] - dot)
                    acc = acc + g * R[k, t]
                    ga[t] = g * inv_att
                gTa = gTa - acc / t_att
                for i in range(N):
                    acc = 0.0
                    e = Y[k, i]
                    for t in range(T):
                        acc = acc + ga[t] * _sgn(X[b, i, t] - e)
                    gy[i] = -acc
                for i in range(N):
                    for m in range(M):
                        gD[i, m] = gD[i, m] + gy[i] * U[k, m]
                        gu[m] = gu[m] + gy[i] * D[i, m]
                    if has_noise:
                        gss[i] = gss[i] + gy[i] * xi[b, k, i]

                if k == 0:
                    for m in range(M - N):
                        for i in range(N):
                            gL[m, i] = gL[m, i] + gu[N + m] * X[b, i, s0]
                else:
                    for m in range(M):
                        gz[m] = gu[m]
                    if k % tau == 0:
                        for i in range(N):
                            gz[i] = 0.0

    if not want_grad:
        return sse_arr, pred_arr, states_arr, None
    grads = {
        "A": gA_arr, "W": gW_arr, "h": gh_arr, "D": gD_arr,
        "t_att": gTa, "t_exp": gTe,
        "mlp_w1": gw1_arr, "mlp_b1": gb1_arr, "mlp_w2": gw2_arr, "mlp_b2": gb2_arr,
        "L": gL_arr, "sqrt_sigma": gss_arr, "Ct": gCt_arr,
    }
    return sse_arr, pred_arr, states_arr, grads


def nearest_neighbors(E_in, Py_ssize_t n_ref, double min_tsep, double min_dist):
    """Exact constrained nearest neighbours via a sweep along the first coordinate.

    Candidates are visited in order of their first-coordinate offset from
    the query and the sweep stops once that offset alone exceeds the best
    distance. Ties go to the smaller index, matching a brute-force scan.
    """
    cdef double[:, ::1] E = np.ascontiguousarray(E_in, dtype=np.float64)
    cdef Py_ssize_t d = E.shape[1], i, j, c, p, q, bj, lo, hi, pos
    cdef double best, d2, delta, gap, gl, gh, lim = min_dist * min_dist
    order_arr = np.argsort(np.asarray(E[:n_ref, 0]), kind="stable").astype(np.intp)
    rank_arr = np.empty(n_ref, dtype=np.intp)
    rank_arr[order_arr] = np.arange(n_ref, dtype=np.intp)
    cdef Py_ssize_t[::1] order = order_arr
    cdef Py_ssize_t[::1] rank = rank_arr
    idx_arr = np.full(n_ref, -1, dtype=np.int64)
    dist_arr = np.full(n_ref, np.inf)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for i in range(n_ref):
            best = INFINITY
            bj = -1
            pos = rank[i]
            lo = pos - 1
            hi = pos + 1
            while lo >= 0 or hi < n_ref:
                gl = INFINITY
                gh = INFINITY
                if lo >= 0:
                    gl = E[i, 0] - E[order[lo], 0]
                    gl = gl * gl
                if hi < n_ref:
                    gh = E[order[hi], 0] - E[i, 0]
                    gh = gh * gh
                if gl <= gh:
                    gap = gl
                    j = order[lo]
                    lo -= 1
                else:
                    gap = gh
                    j = order[hi]
                    hi += 1
                if gap > best:
                    break
                if fabs(<double>(i - j)) <= min_tsep:
                    continue
                d2 = 0.0
                for c in range(d):
                    delta = E[i, c] - E[j, c]
                    d2 = d2 + delta * delta
                if d2 <= lim:
                    continue
                if d2 < best or (d2 == best and j < bj):
                    best = d2
                    bj = j
            if bj >= 0:
                idx[i] = bj
                dist[i] = best ** 0.5
    return idx_arr, dist_arr
