"""Pure NumPy kernels. Same signatures as the compiled ``_kernels`` module.

These are the fallback when the extension is not built, and the reference
the compiled kernels are checked against.
"""
import numpy as np

BACKEND = "python"


def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def forecast_loop(A, W, h, P, D, t_att, t_exp, sign, w1, b1, w2, b2, C, Ct, z0, n_total):
    """Free-running mixture rollout without exploration noise.

    Returns latent states ``(n_total, M)`` and expert weights ``(n_total, J)``;
    row ``k`` holds the state produced by step ``k`` and the weights used for it.
    """
    J, M = A.shape
    lin = M - P
    Z = np.empty((n_total, M))
    Wt = np.empty((n_total, J))
    z = np.array(z0, dtype=float)
    inv_att = sign / t_att
    inv_exp = 1.0 / t_exp
    Wlin = W[:, :, :lin]
    Wrel = W[:, :, lin:]
    for k in range(n_total):
        y = D @ z
        d = np.abs(C - y[:, None]).sum(axis=0)
        a = _softmax(d * inv_att)
        f = Ct @ a
        hid = w1[:, : f.size] @ f + w1[:, f.size:] @ z + b1
        np.maximum(hid, 0.0, out=hid)
        w = _softmax((w2 @ hid + b2) * inv_exp)
        zj = A * z + Wlin @ z[:lin] + Wrel @ np.maximum(z[lin:], 0.0) + h
        z = w @ zj
        Z[k] = z
        Wt[k] = w
    return Z, Wt


def stf_batch(A, W, h, P, D, t_att, t_exp, sign, w1, b1, w2, b2, L,
              X, Ct, s0, tau, xi, sqrt_sigma, want_grad):
    """Sparse-teacher-forced unroll of a batch, optionally with reverse pass.

    ``X`` is ``(B, N, S)``; the context is ``X[:, :, :T_C]`` with
    ``T_C = Ct.shape[2]``. The latent state is initialized from column ``s0``
    and stepped to ``S - 1``. Step ``k`` reads input state ``u_k`` (the
    previous output, with its first ``N`` entries replaced by data when
    ``k > 0`` and ``k % tau == 0``) and produces the prediction for column
    ``s0 + k + 1``.

    Returns ``(sse, pred, states, grads)``: per-sequence sum of squared
    errors ``(B,)``, predictions ``(B, N, K)``, input states ``u_k``
    ``(B, K, M)`` and gradients of ``sse.sum()`` (``None`` unless
    ``want_grad``).
    """
    X = np.asarray(X, dtype=float)
    B, N, S = X.shape
    T = Ct.shape[2]
    C = X[:, :, :T]
    J, M = A.shape
    lin = M - P
    K = S - 1 - s0
    inv_att = sign / t_att

    x0 = X[:, :, s0]
    z = np.concatenate([x0, x0 @ L.T], axis=1)
    pred = np.empty((B, N, K))
    sse = np.zeros(B)
    states = np.empty((B, K, M))
    tape = []
    for k in range(K):
        u = z
        if k > 0 and k % tau == 0:
            u = z.copy()
            u[:, :N] = X[:, :, s0 + k]
        states[:, k] = u
        y = u @ D.T
        if xi is not None:
            y = y + sqrt_sigma * xi[:, k]
        diff = C - y[:, :, None]
        d = np.abs(diff).sum(axis=1)
        r = d * inv_att
        a = _softmax(r, axis=1)
        f = np.einsum("bnt,bt->bn", Ct, a)
        v = np.concatenate([f, u], axis=1)
        hpre = v @ w1.T + b1
        hh = np.maximum(hpre, 0.0)
        q = (hh @ w2.T + b2) / t_exp
        w = _softmax(q, axis=1)
        phi = u.copy()
        phi[:, lin:] = np.maximum(phi[:, lin:], 0.0)
        zj = A[None] * u[:, None, :] + np.einsum("jmk,bk->bjm", W, phi) + h[None]
        z = np.einsum("bj,bjm->bm", w, zj)
        err = z[:, :N] - X[:, :, s0 + k + 1]
        sse += (err * err).sum(axis=1)
        pred[:, :, k] = z[:, :N]
        if want_grad:
            tape.append((u, diff, r, a, v, hpre, hh, q, w, phi, zj, err))

    if not want_grad:
        return sse, pred, states, None

    g = {
        "A": np.zeros_like(A), "W": np.zeros_like(W), "h": np.zeros_like(h),
        "D": np.zeros_like(D), "t_att": 0.0, "t_exp": 0.0,
        "mlp_w1": np.zeros_like(w1), "mlp_b1": np.zeros_like(b1),
        "mlp_w2": np.zeros_like(w2), "mlp_b2": np.zeros_like(b2),
        "L": np.zeros_like(L), "sqrt_sigma": np.zeros(N), "Ct": np.zeros_like(Ct),
    }
    gz = np.zeros((B, M))
    for k in range(K - 1, -1, -1):
        u, diff, r, a, v, hpre, hh, q, w, phi, zj, err = tape[k]
        gz[:, :N] += 2.0 * err
        gw = np.einsum("bm,bjm->bj", gz, zj)
        gzj = w[:, :, None] * gz[:, None, :]
        g["A"] += np.einsum("bjm,bm->jm", gzj, u)
        g["W"] += np.einsum("bjm,bk->jmk", gzj, phi)
        g["h"] += gzj.sum(axis=0)
        gu = np.einsum("bjm,jm->bm", gzj, A)
        gphi = np.einsum("bjm,jmk->bk", gzj, W)
        gphi[:, lin:] *= u[:, lin:] > 0
        gu += gphi

        gq = w * (gw - (w * gw).sum(axis=1, keepdims=True))
        g["t_exp"] -= (gq * q).sum() / t_exp
        go = gq / t_exp
        g["mlp_w2"] += go.T @ hh
        g["mlp_b2"] += go.sum(axis=0)
        ghpre = (go @ w2) * (hpre > 0)
        g["mlp_w1"] += ghpre.T @ v
        g["mlp_b1"] += ghpre.sum(axis=0)
        gv = ghpre @ w1
        gf = gv[:, :N]
        gu += gv[:, N:]

        g["Ct"] += gf[:, :, None] * a[:, None, :]
        ga = np.einsum("bnt,bn->bt", Ct, gf)
        gr = a * (ga - (a * ga).sum(axis=1, keepdims=True))
        g["t_att"] -= (gr * r).sum() / t_att
        gd = gr * inv_att
        gy = -(gd[:, None, :] * np.sign(diff)).sum(axis=2)
        g["D"] += gy.T @ u
        gu += gy @ D
        if xi is not None:
            g["sqrt_sigma"] += (gy * xi[:, k]).sum(axis=0)

        if k == 0:
            g["L"] += gu[:, N:].T @ x0
        else:
            gz = gu
            if k % tau == 0:
                gz[:, :N] = 0.0
    return sse, pred, states, g


def nearest_neighbors(E, n_ref, min_tsep, min_dist):
    """Brute-force constrained nearest neighbour for the first ``n_ref`` rows of ``E``.

    Candidates ``j < n_ref`` must satisfy ``|i - j| > min_tsep`` and
    ``||E_i - E_j|| > min_dist``. Returns ``(index, distance)``; index ``-1``
    marks points without an admissible neighbour.
    """
    E = np.ascontiguousarray(E, dtype=float)
    n = n_ref
    idx = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.inf)
    block = 128
    cols = np.arange(n)
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = np.arange(start, stop)
        d2 = np.zeros((stop - start, n))
        for c in range(E.shape[1]):
            delta = E[start:stop, c, None] - E[None, :n, c]
            d2 += delta * delta
        bad = (np.abs(rows[:, None] - cols[None, :]) <= min_tsep) | (d2 <= min_dist * min_dist)
        d2[bad] = np.inf
        j = np.argmin(d2, axis=1)
        best = d2[np.arange(stop - start), j]
        ok = np.isfinite(best)
        idx[start:stop][ok] = j[ok]
        dist[start:stop][ok] = np.sqrt(best[ok])
    return idx, dist
