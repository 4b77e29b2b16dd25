"""Pure numpy implementations of the hot kernels.

Each function mirrors the compiled version in ``_core.pyx`` step for step.
All arithmetic is elementwise over the batch axis, so a point's result does
not depend on which other points share the batch.
"""
import numpy as np

LAMBDA_MAX = 1e16
MIN_DEPTH = 1e-9

# status codes shared with _core
CONVERGED = 0
MAX_ITER = 1
BAD_INIT = 2


def _residuals(uv, w, cams, X):
    """Weighted residuals, Jacobians and cost for points ``X`` (n, 3).

    Returns ``cost (n,)``, ``r (V, n, 2)``, ``J (V, n, 2, 3)``, ``ok (n,)``.
    ``ok`` is False when a weighted view sees the point at non-positive depth.
    """
    V, n = w.shape
    r = np.zeros((V, n, 2))
    J = np.zeros((V, n, 2, 3))
    cost = np.zeros(n)
    ok = np.ones(n, dtype=bool)
    x0, x1, x2 = X[:, 0], X[:, 1], X[:, 2]
    for v in range(V):
        fx, fy, cx, cy = cams[v, 0], cams[v, 1], cams[v, 2], cams[v, 3]
        R = cams[v, 4:13]
        t = cams[v, 13:16]
        px = R[0] * x0 + R[1] * x1 + R[2] * x2 + t[0]
        py = R[3] * x0 + R[4] * x1 + R[5] * x2 + t[1]
        pz = R[6] * x0 + R[7] * x1 + R[8] * x2 + t[2]
        wv = w[v]
        used = wv > 0
        ok &= ~used | (pz > MIN_DEPTH)
        z = np.where(pz > MIN_DEPTH, pz, 1.0)
        iz = 1.0 / z
        du = wv * (uv[v, :, 0] - (fx * px * iz + cx))
        dv = wv * (uv[v, :, 1] - (fy * py * iz + cy))
        du = np.where(used, du, 0.0)
        dv = np.where(used, dv, 0.0)
        r[v, :, 0] = du
        r[v, :, 1] = dv
        cost = cost + du * du + dv * dv
        # residual = w * (obs - proj) -> dr/dX = -w * dproj/dX
        a = -np.where(used, wv, 0.0) * fx * iz
        b = -np.where(used, wv, 0.0) * fy * iz
        for k in range(3):
            J[v, :, 0, k] = a * (R[k] - px * iz * R[6 + k])
            J[v, :, 1, k] = b * (R[3 + k] - py * iz * R[6 + k])
    return cost, r, J, ok


def _normal_eqs(r, J):
    V = r.shape[0]
    n = r.shape[1]
    A = np.zeros((n, 3, 3))
    g = np.zeros((n, 3))
    for v in range(V):
        for c in range(2):
            for i in range(3):
                g[:, i] = g[:, i] + J[v, :, c, i] * r[v, :, c]
                for j in range(3):
                    A[:, i, j] = A[:, i, j] + J[v, :, c, i] * J[v, :, c, j]
    return A, g


def _solve3(M, b):
    """Cramer's rule, elementwise over the batch."""
    a, bb, c = M[:, 0, 0], M[:, 0, 1], M[:, 0, 2]
    d, e, f = M[:, 1, 0], M[:, 1, 1], M[:, 1, 2]
    g, h, i = M[:, 2, 0], M[:, 2, 1], M[:, 2, 2]
    c0 = e * i - f * h
    c1 = f * g - d * i
    c2 = d * h - e * g
    det = a * c0 + bb * c1 + c * c2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        x0 = (b[:, 0] * c0 + bb * (f * b[:, 2] - b[:, 1] * i) + c * (b[:, 1] * h - e * b[:, 2])) * inv
        x1 = (a * (b[:, 1] * i - f * b[:, 2]) + b[:, 0] * c1 + c * (d * b[:, 2] - b[:, 1] * g)) * inv
        x2 = (a * (e * b[:, 2] - b[:, 1] * h) + bb * (b[:, 1] * g - d * b[:, 2]) + b[:, 0] * c2) * inv
    return np.stack([x0, x1, x2], axis=1)


def triangulate_points(uv, w, cams, x0, max_iter=100, cost_tol=1e-10, step_tol=1e-10,
                       lambda_init=1e-3, lambda_up=10.0, lambda_down=10.0):
    """Independent per-point LM on ``sum_v w^2 |uv - proj(X)|^2``.

    uv: (V, N, 2); w: (V, N); cams: (V, 16) rows of fx, fy, cx, cy, R (9), t (3);
    x0: (N, 3). Returns ``X, cost, iterations, status``.
    """
    uv = np.ascontiguousarray(uv, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cams = np.ascontiguousarray(cams, dtype=np.float64)
    X = np.array(x0, dtype=np.float64, copy=True)
    N = X.shape[0]
    iters = np.zeros(N, dtype=np.int32)
    status = np.full(N, MAX_ITER, dtype=np.int8)
    lam = np.full(N, float(lambda_init))
    cost, _, _, ok = _residuals(uv, w, cams, X)
    done = ~ok | (cost == 0.0)
    status[~ok] = BAD_INIT
    status[ok & (cost == 0.0)] = CONVERGED

    while True:
        act = np.flatnonzero(~done & (iters < max_iter))
        if act.size == 0:
            break
        iters[act] += 1
        uva, wa = uv[:, act], w[:, act]
        Xa, ca, la = X[act], cost[act], lam[act]
        _, r, J, _ = _residuals(uva, wa, cams, Xa)
        A, g = _normal_eqs(r, J)
        dA = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], axis=1)
        floor = 1e-12 * np.maximum(1.0, dA.max(axis=1))
        D = np.maximum(dA, floor[:, None])

        pending = np.ones(act.size, dtype=bool)
        accepted = np.zeros(act.size, dtype=bool)
        finished = np.zeros(act.size, dtype=bool)
        Xn = Xa.copy()
        cn = ca.copy()
        while pending.any():
            over = pending & (la > LAMBDA_MAX)
            # no decrease at maximal damping: local minimum to precision
            finished |= over
            pending &= ~over
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            M = A[p].copy()
            for k in range(3):
                M[:, k, k] = M[:, k, k] + la[p] * D[p, k]
            dx = _solve3(M, -g[p])
            fin = np.all(np.isfinite(dx), axis=1)
            la[p[~fin]] *= lambda_up
            p, dx = p[fin], dx[fin]
            small = np.sqrt(dx[:, 0] ** 2 + dx[:, 1] ** 2 + dx[:, 2] ** 2) < step_tol
            if small.any():
                # converged: keep the last tiny step only if it still lowers the cost
                ps = p[small]
                Xs = Xa[ps] + dx[small]
                cs, _, _, oks = _residuals(uva[:, ps], wa[:, ps], cams, Xs)
                keep = oks & (cs < ca[ps])
                Xn[ps[keep]] = Xs[keep]
                cn[ps[keep]] = cs[keep]
                finished[ps] = True
                pending[ps] = False
            p, dx = p[~small], dx[~small]
            if p.size == 0:
                continue
            Xt = Xa[p] + dx
            ct, _, _, okt = _residuals(uva[:, p], wa[:, p], cams, Xt)
            good = okt & (ct < ca[p])
            q = p[good]
            Xn[q] = Xt[good]
            cn[q] = ct[good]
            accepted[q] = True
            pending[q] = False
            la[q] = np.maximum(la[q] / lambda_down, 1e-300)
            la[p[~good]] *= lambda_up

        idx = act[finished]
        done[idx] = True
        status[idx] = CONVERGED
        X[idx] = Xn[finished]
        cost[idx] = cn[finished]
        acc = np.flatnonzero(accepted)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = (ca[acc] - cn[acc]) / ca[acc]
        gi = act[acc]
        X[gi] = Xn[acc]
        cost[gi] = cn[acc]
        stop = (cn[acc] == 0.0) | (rel < cost_tol)
        done[gi[stop]] = True
        status[gi[stop]] = CONVERGED
        lam[act] = la
    return X, cost, iters, status


def window_majority(hoi, half):
    """1 where strictly more than half of the (edge-truncated) window is 1."""
    x = np.asarray(hoi, dtype=np.int64)
    n = x.size
    c = np.concatenate([[0], np.cumsum(x)])
    i = np.arange(n)
    lo = np.maximum(i - half, 0)
    hi = np.minimum(i + half + 1, n)
    count = c[hi] - c[lo]
    return (2 * count > (hi - lo)).astype(np.uint8)


def chroma_key(rgb, h_lo, h_hi, s_min, v_min):
    """Mask of pixels whose hexcone HSV lies inside the green band."""
    img = np.asarray(rgb, dtype=np.int64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    d = mx - mn
    safe = np.where(d == 0, 1, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(mx == r, (g - b) / safe,
                     np.where(mx == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe))
    h = 60.0 * h
    h = np.where(h < 0, h + 360.0, h)
    h = np.where(d == 0, 0.0, h)
    s = np.where(mx == 0, 0.0, d / np.where(mx == 0, 1, mx))
    v = mx / 255.0
    return ((h >= h_lo) & (h <= h_hi) & (s >= s_min) & (v >= v_min)).astype(np.uint8)
