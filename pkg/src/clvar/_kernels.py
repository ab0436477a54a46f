"""Compiled FISTA kernels for the quadratic structure subproblems.

Both kernels minimise a convex quadratic over products of scaled simplices
with monotone FISTA and backtracking; the Python-level contracts and the
reference (non-compiled) objective/gradient forms live in ``learner.py``.

The quadratic's Hessian product is linear, so the product at the momentum
point ``y = z + beta (z - x)`` is formed from the products at ``z`` and ``x``
instead of being recomputed; each iteration costs one Hessian product per
backtracking trial.  All work arrays are allocated once per call.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f
        return wrap


@njit(cache=True)
def _project_into(v, mass, out, buf):
    """Euclidean projection of ``v`` onto ``{x >= 0, sum x = mass}``, written to ``out``."""
    n = v.shape[0]
    for i in range(n):
        buf[i] = v[i]
    # descending insertion sort; the vectors here are short
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += buf[i]
        t = (css - mass) / (i + 1)
        if buf[i] - t > 0:
            theta = t
    s = 0.0
    for i in range(n):
        x = v[i] - theta
        out[i] = x if x > 0 else 0.0
        s += out[i]
    if s > 0:
        f = mass / s
        for i in range(n):
            out[i] *= f


@njit(cache=True)
def _project(v, mass):
    out = np.empty(v.shape[0])
    _project_into(v, mass, out, np.empty(v.shape[0]))
    return out


@njit(cache=True)
def _power_lmax(P, iters):
    n = P.shape[0]
    v = np.empty(n)
    for i in range(n):
        v[i] = 1.0 + 0.01 * i
    lam = 0.0
    for _ in range(iters):
        w = P @ v
        nw = np.sqrt(w @ w)
        if nw == 0.0:
            return 0.0
        lam = (v @ w) / (v @ v)
        v = w / nw
    return lam


# ---------------------------------------------------------------------------
# independent problems  min x'P_i x - 2 q_i'x + c_i  on the mass-simplex
# ---------------------------------------------------------------------------

@njit(cache=True)
def _matvec(P, x, out):
    n = x.shape[0]
    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += P[a, b] * x[b]
        out[a] = acc


@njit(cache=True)
def _quad_value(x, Px, q, c0):
    f = c0
    for a in range(x.shape[0]):
        f += x[a] * Px[a] - 2.0 * q[a] * x[a]
    return f


@njit(cache=True)
def batched_simplex_qp(P, q, c0, X0, mass, shrink, max_iter, tol):
    m, n = X0.shape
    X = X0.copy()
    F = np.empty(m)
    iters = np.zeros(m, dtype=np.int64)
    conv = np.zeros(m, dtype=np.bool_)
    x = np.empty(n)
    y = np.empty(n)
    z = np.empty(n)
    g = np.empty(n)
    w = np.empty(n)
    Px = np.empty(n)
    Py = np.empty(n)
    Pz = np.empty(n)
    buf = np.empty(n)
    for i in range(m):
        Pi = P[i]
        qi = q[i]
        _project_into(X0[i], mass, x, buf)
        _matvec(Pi, x, Px)
        fx = _quad_value(x, Px, qi, c0[i])
        L = 2.0 * _power_lmax(Pi, 30) * 1.05
        s = 1.0 / L if L > 1e-300 else 1.0
        for a in range(n):
            y[a] = x[a]
            Py[a] = Px[a]
        fy = fx
        t = 1.0
        k = 0
        for k in range(1, max_iter + 1):
            for a in range(n):
                g[a] = 2.0 * (Py[a] - qi[a])
            while True:
                for a in range(n):
                    w[a] = y[a] - s * g[a]
                _project_into(w, mass, z, buf)
                _matvec(Pi, z, Pz)
                fz = _quad_value(z, Pz, qi, c0[i])
                dg = 0.0
                dd = 0.0
                for a in range(n):
                    d = z[a] - y[a]
                    dg += d * g[a]
                    dd += d * d
                bound = fy + dg + dd / (2.0 * s)
                if fz <= bound + 1e-12 * abs(bound):
                    break
                s *= shrink
                if s < 1e-300:
                    raise FloatingPointError("backtracking step underflow")
            if not np.isfinite(fz):
                raise FloatingPointError("non-finite objective in simplex QP")
            if fz <= fx:
                rel = (fx - fz) / max(abs(fx), 1e-300)
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                beta = (t - 1.0) / t_new
                for a in range(n):
                    y[a] = z[a] + beta * (z[a] - x[a])
                    Py[a] = Pz[a] + beta * (Pz[a] - Px[a])
                    x[a] = z[a]
                    Px[a] = Pz[a]
                fx = fz
                t = t_new
                if rel <= tol:
                    conv[i] = True
                    break
                fy = _quad_value(y, Py, qi, c0[i])
            else:
                # momentum overshoot: restart from x
                t = 1.0
                for a in range(n):
                    y[a] = x[a]
                    Py[a] = Px[a]
                fy = fx
        for a in range(n):
            X[i, a] = x[a]
        F[i] = fx
        iters[i] = k
    return X, F, iters, conv


# ---------------------------------------------------------------------------
# dictionary problem  min_D sum_k a_k'Q_k a_k - 2 C_k'a_k + rr,  a_k = D g_k,
# every column of D on the mass-simplex
# ---------------------------------------------------------------------------

@njit(cache=True)
def _products(Q, G, D, A, QA):
    """``A = D G`` and ``QA[:, k] = Q_k A[:, k]``."""
    K = Q.shape[0]
    Kb, r = D.shape
    for b in range(Kb):
        for k in range(K):
            acc = 0.0
            for j in range(r):
                acc += D[b, j] * G[j, k]
            A[b, k] = acc
    for k in range(K):
        Qk = Q[k]
        for b in range(Kb):
            acc = 0.0
            for c in range(Kb):
                acc += Qk[b, c] * A[c, k]
            QA[b, k] = acc


@njit(cache=True)
def _dict_value_from(A, QA, C, rr):
    f = rr
    Kb, K = A.shape
    for k in range(K):
        for b in range(Kb):
            f += A[b, k] * QA[b, k] - 2.0 * C[k, b] * A[b, k]
    return f


@njit(cache=True)
def _dict_value(Q, C, rr, G, D):
    Kb = D.shape[0]
    K = Q.shape[0]
    A = np.empty((Kb, K))
    QA = np.empty((Kb, K))
    _products(Q, G, D, A, QA)
    return _dict_value_from(A, QA, C, rr)


@njit(cache=True)
def _dict_hess_apply(Q, G, E):
    Kb, r = E.shape
    K = Q.shape[0]
    A = np.empty((Kb, K))
    QA = np.empty((Kb, K))
    _products(Q, G, E, A, QA)
    out = np.zeros((Kb, r))
    for b in range(Kb):
        for j in range(r):
            acc = 0.0
            for k in range(K):
                acc += QA[b, k] * G[j, k]
            out[b, j] = 2.0 * acc
    return out


@njit(cache=True)
def dictionary_simplex_qp(Q, C, rr, G, D0, mass, shrink, max_iter, tol):
    Kb, r = D0.shape
    K = Q.shape[0]
    # Lipschitz estimate by power iteration on the Hessian map
    E = np.empty((Kb, r))
    for i in range(Kb):
        for j in range(r):
            E[i, j] = 1.0 + 0.01 * (i + j * Kb)
    lam = 0.0
    for _ in range(30):
        HE = _dict_hess_apply(Q, G, E)
        nrm = np.sqrt(np.sum(HE * HE))
        if nrm == 0.0:
            lam = 0.0
            break
        lam = np.sum(E * HE) / np.sum(E * E)
        E = HE / nrm
    L = lam * 1.05
    s = 1.0 / L if L > 1e-300 else 1.0

    x = np.empty((Kb, r))
    y = np.empty((Kb, r))
    z = np.empty((Kb, r))
    g = np.empty((Kb, r))
    Ax = np.empty((Kb, K))
    Ay = np.empty((Kb, K))
    Az = np.empty((Kb, K))
    QAx = np.empty((Kb, K))
    QAy = np.empty((Kb, K))
    QAz = np.empty((Kb, K))
    col = np.empty(Kb)
    pcol = np.empty(Kb)
    buf = np.empty(Kb)

    for j in range(r):
        for b in range(Kb):
            col[b] = D0[b, j]
        _project_into(col, mass, pcol, buf)
        for b in range(Kb):
            x[b, j] = pcol[b]
    _products(Q, G, x, Ax, QAx)
    fx = _dict_value_from(Ax, QAx, C, rr)
    y[:, :] = x
    Ay[:, :] = Ax
    QAy[:, :] = QAx
    fy = fx
    t = 1.0
    conv = False
    k = 0
    for k in range(1, max_iter + 1):
        # gradient 2 (QA - C') G'
        for b in range(Kb):
            for j in range(r):
                acc = 0.0
                for kk in range(K):
                    acc += (QAy[b, kk] - C[kk, b]) * G[j, kk]
                g[b, j] = 2.0 * acc
        while True:
            for j in range(r):
                for b in range(Kb):
                    col[b] = y[b, j] - s * g[b, j]
                _project_into(col, mass, pcol, buf)
                for b in range(Kb):
                    z[b, j] = pcol[b]
            _products(Q, G, z, Az, QAz)
            fz = _dict_value_from(Az, QAz, C, rr)
            dg = 0.0
            dd = 0.0
            for b in range(Kb):
                for j in range(r):
                    d = z[b, j] - y[b, j]
                    dg += d * g[b, j]
                    dd += d * d
            bound = fy + dg + dd / (2.0 * s)
            if fz <= bound + 1e-12 * abs(bound):
                break
            s *= shrink
            if s < 1e-300:
                raise FloatingPointError("backtracking step underflow")
        if not np.isfinite(fz):
            raise FloatingPointError("non-finite objective in dictionary QP")
        if fz <= fx:
            rel = (fx - fz) / max(abs(fx), 1e-300)
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            for b in range(Kb):
                for j in range(r):
                    y[b, j] = z[b, j] + beta * (z[b, j] - x[b, j])
                    x[b, j] = z[b, j]
                for kk in range(K):
                    Ay[b, kk] = Az[b, kk] + beta * (Az[b, kk] - Ax[b, kk])
                    QAy[b, kk] = QAz[b, kk] + beta * (QAz[b, kk] - QAx[b, kk])
                    Ax[b, kk] = Az[b, kk]
                    QAx[b, kk] = QAz[b, kk]
            fx = fz
            t = t_new
            if rel <= tol:
                conv = True
                break
            fy = _dict_value_from(Ay, QAy, C, rr)
        else:
            t = 1.0
            y[:, :] = x
            Ay[:, :] = Ax
            QAy[:, :] = QAx
            fy = fx
    return x, fx, k, conv
