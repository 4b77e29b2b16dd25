# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``fallback.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, fmax

cnp.import_array()

cdef double LAMBDA_MAX = 1e16
cdef double MIN_DEPTH = 1e-9


cdef int _point_system(const double[:, :, ::1] uv, const double[:, ::1] w,
                       const double[:, ::1] cams, Py_ssize_t n, double* X,
                       double* A, double* g, double* cost, bint want_jac) noexcept nogil:
    """Cost (and normal equations when ``want_jac``) for point ``n``.

    Returns 0 when some weighted view sees the point at non-positive depth.
    """
    cdef Py_ssize_t V = w.shape[0]
    cdef Py_ssize_t v, i, j
    cdef double fx, fy, cx, cy, px, py, pz, iz, wv, du, dv, a, b
    cdef double Ju[3]
    cdef double Jv[3]
    cdef int ok = 1
    cost[0] = 0.0
    if want_jac:
        for i in range(9):
            A[i] = 0.0
        for i in range(3):
            g[i] = 0.0
    for v in range(V):
        wv = w[v, n]
        if not wv > 0:
            continue
        fx = cams[v, 0]; fy = cams[v, 1]; cx = cams[v, 2]; cy = cams[v, 3]
        px = cams[v, 4] * X[0] + cams[v, 5] * X[1] + cams[v, 6] * X[2] + cams[v, 13]
        py = cams[v, 7] * X[0] + cams[v, 8] * X[1] + cams[v, 9] * X[2] + cams[v, 14]
        pz = cams[v, 10] * X[0] + cams[v, 11] * X[1] + cams[v, 12] * X[2] + cams[v, 15]
        if not pz > MIN_DEPTH:
            ok = 0
            continue
        iz = 1.0 / pz
        du = wv * (uv[v, n, 0] - (fx * px * iz + cx))
        dv = wv * (uv[v, n, 1] - (fy * py * iz + cy))
        cost[0] = cost[0] + du * du + dv * dv
        if want_jac:
            a = -wv * fx * iz
            b = -wv * fy * iz
            for i in range(3):
                Ju[i] = a * (cams[v, 4 + i] - px * iz * cams[v, 10 + i])
                Jv[i] = b * (cams[v, 7 + i] - py * iz * cams[v, 10 + i])
            for i in range(3):
                g[i] = g[i] + Ju[i] * du + Jv[i] * dv
                for j in range(3):
                    A[3 * i + j] = A[3 * i + j] + Ju[i] * Ju[j] + Jv[i] * Jv[j]
    return ok


cdef int _solve3(double* M, double* b, double* x) noexcept nogil:
    cdef double a = M[0], bb = M[1], c = M[2]
    cdef double d = M[3], e = M[4], f = M[5]
    cdef double gg = M[6], h = M[7], i = M[8]
    cdef double c0 = e * i - f * h
    cdef double c1 = f * gg - d * i
    cdef double c2 = d * h - e * gg
    cdef double det = a * c0 + bb * c1 + c * c2
    cdef double inv = 1.0 / det
    x[0] = (b[0] * c0 + bb * (f * b[2] - b[1] * i) + c * (b[1] * h - e * b[2])) * inv
    x[1] = (a * (b[1] * i - f * b[2]) + b[0] * c1 + c * (d * b[2] - b[1] * gg)) * inv
    x[2] = (a * (e * b[2] - b[1] * h) + bb * (b[1] * gg - d * b[2]) + b[0] * c2) * inv
    return isfinite(x[0]) and isfinite(x[1]) and isfinite(x[2])


def triangulate_points(uv, w, cams, x0, int max_iter=100, double cost_tol=1e-10,
                       double step_tol=1e-10, double lambda_init=1e-3,
                       double lambda_up=10.0, double lambda_down=10.0):
    cdef const double[:, :, ::1] uv_ = np.ascontiguousarray(uv, dtype=np.float64)
    cdef const double[:, ::1] w_ = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] cams_ = np.ascontiguousarray(cams, dtype=np.float64)
    X_arr = np.array(x0, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t N = X_arr.shape[0]
    cost_arr = np.zeros(N, dtype=np.float64)
    it_arr = np.zeros(N, dtype=np.int32)
    st_arr = np.ones(N, dtype=np.int8)
    cdef double[:, ::1] X = X_arr
    cdef double[::1] cost = cost_arr
    cdef int[::1] iters = it_arr
    cdef signed char[::1] status = st_arr
    cdef Py_ssize_t n, k
    cdef double A[9]
    cdef double M[9]
    cdef double g[3]
    cdef double ng[3]
    cdef double dx[3]
    cdef double xt[3]
    cdef double D[3]
    cdef double c, ct, lam, floor, dmax, rel
    cdef int it, accepted, finished, ok

    with nogil:
        for n in range(N):
            ok = _point_system(uv_, w_, cams_, n, &X[n, 0], A, g, &c, 0)
            cost[n] = c
            if not ok:
                status[n] = 2
                continue
            if c == 0.0:
                status[n] = 0
                continue
            lam = lambda_init
            it = 0
            while it < max_iter:
                it += 1
                _point_system(uv_, w_, cams_, n, &X[n, 0], A, g, &c, 1)
                c = cost[n]
                dmax = fmax(fmax(A[0], A[4]), A[8])
                floor = 1e-12 * fmax(1.0, dmax)
                D[0] = fmax(A[0], floor); D[1] = fmax(A[4], floor); D[2] = fmax(A[8], floor)
                for k in range(3):
                    ng[k] = -g[k]
                accepted = 0
                finished = 0
                while lam <= LAMBDA_MAX:
                    for k in range(9):
                        M[k] = A[k]
                    M[0] = M[0] + lam * D[0]
                    M[4] = M[4] + lam * D[1]
                    M[8] = M[8] + lam * D[2]
                    if not _solve3(M, ng, dx):
                        lam = lam * lambda_up
                        continue
                    if sqrt(dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]) < step_tol:
                        # converged: keep the last tiny step only if it still lowers the cost
                        for k in range(3):
                            xt[k] = X[n, k] + dx[k]
                        ok = _point_system(uv_, w_, cams_, n, xt, A, g, &ct, 0)
                        if ok and ct < c:
                            for k in range(3):
                                X[n, k] = xt[k]
                            cost[n] = ct
                        finished = 1
                        break
                    for k in range(3):
                        xt[k] = X[n, k] + dx[k]
                    ok = _point_system(uv_, w_, cams_, n, xt, A, g, &ct, 0)
                    if ok and ct < c:
                        accepted = 1
                        lam = fmax(lam / lambda_down, 1e-300)
                        break
                    lam = lam * lambda_up
                else:
                    finished = 1
                if not accepted:
                    status[n] = 0
                    break
                rel = (c - ct) / c
                for k in range(3):
                    X[n, k] = xt[k]
                cost[n] = ct
                if ct == 0.0 or rel < cost_tol:
                    status[n] = 0
                    break
            iters[n] = it
    return X_arr, cost_arr, it_arr, st_arr


def window_majority(hoi, Py_ssize_t half):
    cdef const unsigned char[::1] x = np.ascontiguousarray(hoi, dtype=np.uint8)
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t i, lo, hi, count = 0
    # running window count
    with nogil:
        for i in range(min(half, n)):
            count += x[i] != 0
        for i in range(n):
            if i + half < n:
                count += x[i + half] != 0
            if i - half - 1 >= 0:
                count -= x[i - half - 1] != 0
            lo = i - half if i - half > 0 else 0
            hi = i + half + 1 if i + half + 1 < n else n
            out[i] = 2 * count > hi - lo
    return out_arr


def chroma_key(rgb, double h_lo, double h_hi, double s_min, double v_min):
    cdef const unsigned char[:, :, ::1] img = np.ascontiguousarray(rgb, dtype=np.uint8)
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    out_arr = np.zeros((H, W), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef long r, gg, b, mx, mn, d
    cdef double h, s, v
    with nogil:
        for y in range(H):
            for x in range(W):
                r = img[y, x, 0]; gg = img[y, x, 1]; b = img[y, x, 2]
                mx = r if r > gg else gg
                mx = mx if mx > b else b
                mn = r if r < gg else gg
                mn = mn if mn < b else b
                d = mx - mn
                if d == 0:
                    h = 0.0
                elif mx == r:
                    h = 60.0 * (<double>(gg - b) / <double>d)
                elif mx == gg:
                    h = 60.0 * (2.0 + <double>(b - r) / <double>d)
                else:
                    h = 60.0 * (4.0 + <double>(r - gg) / <double>d)
                if h < 0:
                    h = h + 360.0
                s = 0.0 if mx == 0 else <double>d / <double>mx
                v = mx / 255.0
                out[y, x] = (h >= h_lo) and (h <= h_hi) and (s >= s_min) and (v >= v_min)
    return out_arr
