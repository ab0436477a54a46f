"""Independent reference computations for the test-suite.

Nothing here imports the package's solvers: every oracle is a brute-force
search, a plain loop or a textbook iteration.
"""

import itertools

import numpy as np


# ------------------------------------------------------------- simplex QPs

def _lattice(d, n):
    """All non-negative integer vectors of length ``d`` summing to ``n``."""
    for cut in itertools.combinations(range(n + d - 1), d - 1):
        prev = -1
        out = []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(n + d - 1 - prev - 1)
        yield out


def refined_grid_qp(objective, d, mass, resolution=1e-4, coarse=8):
    """Minimise ``objective`` (vectorised over rows) on the ``mass``-simplex by grid search.

    A full lattice of spacing ``mass / coarse`` is searched first; the best point
    is then re-centred on ever finer local lattices (spacing halved each level)
    until the spacing is below ``resolution``.
    """
    h = mass / coarse
    pts = np.array(list(_lattice(d, coarse)), dtype=float) * h
    vals = objective(pts)
    best = pts[np.argmin(vals)]
    fbest = float(vals.min())
    moves = np.array(list(itertools.product((-1, 0, 1), repeat=d - 1)), dtype=float)
    while True:
        while True:
            cand = np.empty((moves.shape[0], d))
            cand[:, :-1] = best[:-1] + h * moves
            cand[:, -1] = mass - cand[:, :-1].sum(axis=1)
            cand = cand[np.all(cand >= 0, axis=1)]
            v = objective(cand)
            i = int(np.argmin(v))
            if v[i] < fbest:
                best, fbest = cand[i], float(v[i])
            else:
                break
        if h <= resolution:
            return best, fbest
        h /= 2.0


def grid_simplex_qp(c, mass, resolution=1e-4):
    """Nearest point to ``c`` on the simplex, by refined grid search."""
    c = np.asarray(c, dtype=float)
    return refined_grid_qp(lambda P: np.sum((P - c) ** 2, axis=1), c.size, mass, resolution)


def grid_1d_simplex(objective, mass, resolution):
    """Exhaustive grid over the 1-simplex ``{(u, mass - u)}``."""
    n = int(round(mass / resolution))
    u = np.linspace(0.0, mass, n + 1)
    P = np.stack([u, mass - u], axis=1)
    v = np.array([objective(p) for p in P])
    i = int(np.argmin(v))
    return P[i], float(v[i])


# ---------------------------------------------------------- regressions

def gradient_descent_ridge(X, y, lam, tol=1e-14, max_iter=1_000_000):
    L = 2 * (np.linalg.eigvalsh(X.T @ X).max() + lam)
    w = np.zeros(X.shape[1])
    for _ in range(max_iter):
        g = 2 * (X.T @ (X @ w - y) + lam * w)
        if np.linalg.norm(g) < tol:
            break
        w = w - g / L
    return w


def lasso_cd(X, y, lam, tol=1e-13, max_sweeps=200_000):
    """Cyclic coordinate descent for ``||y - Xw||^2 + lam ||w||_1``."""
    n, m = X.shape
    w = np.zeros(m)
    r = y.astype(float).copy()
    col_sq = np.sum(X * X, axis=0)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(m):
            if col_sq[j] == 0:
                continue
            old = w[j]
            rho = X[:, j] @ r + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lam / 2, 0.0) / col_sq[j]
            if new != old:
                r -= X[:, j] * (new - old)
                w[j] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            break
    return w


def _block_update(Xb, r, lam):
    """Exact minimiser of ``||r - Xb u||^2 + lam ||u||_2`` by bisection on ``||u||``."""
    g = 2 * Xb.T @ r
    if np.linalg.norm(g) <= lam:
        return np.zeros(Xb.shape[1])
    A = 2 * Xb.T @ Xb

    def u_of(eta):
        return np.linalg.solve(A + (lam / eta) * np.eye(A.shape[0]), g)

    lo, hi = 1e-300, 1.0
    while np.linalg.norm(u_of(hi)) > hi:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi) if hi / max(lo, 1e-300) < 4 else np.sqrt(lo * hi)
        if np.linalg.norm(u_of(mid)) > mid:
            lo = mid
        else:
            hi = mid
    return u_of(hi)


def group_lasso_bcd(X, y, lam, block, tol=1e-13, max_sweeps=100_000):
    """Block coordinate descent for ``||y - Xw||^2 + lam sum_b ||w_b||_2``."""
    m = X.shape[1]
    w = np.zeros(m)
    r = y.astype(float).copy()
    for _ in range(max_sweeps):
        delta = 0.0
        for b in range(m // block):
            sl = slice(b * block, (b + 1) * block)
            Xb = X[:, sl]
            r_full = r + Xb @ w[sl]
            new = _block_update(Xb, r_full, lam)
            delta = max(delta, np.max(np.abs(new - w[sl])))
            w[sl] = new
            r = r_full - Xb @ new
        if delta < tol:
            break
    return w


# ------------------------------------------------------------ spectra

def companion_roots_radius(c):
    """Largest root modulus of ``z^n - c_1 z^{n-1} - ... - c_n``."""
    return float(np.max(np.abs(np.roots(np.concatenate([[1.0], -np.asarray(c)])))))


# ------------------------------------------------------------ loops

def lag_design_loop(Y, p):
    T, K = Y.shape
    X = np.zeros((T - p, K * p))
    for t in range(p, T):
        for b in range(K):
            for l in range(1, p + 1):
                X[t - p, b * p + (l - 1)] = Y[t - l, b]
    return X, Y[p:]


def assemble_loop(Gamma, V, p):
    K = Gamma.shape[0]
    W = np.zeros_like(V)
    for b in range(K):
        for k in range(K):
            for l in range(p):
                W[b * p + l, k] = Gamma[b, k] * V[b * p + l, k]
    return W


def clvar_objective_loop(Gamma, V, X, Y, lam, p):
    n, K = Y.shape
    total = 0.0
    for t in range(n):
        for k in range(K):
            pred = 0.0
            for b in range(K):
                inner = 0.0
                for l in range(p):
                    inner += V[b * p + l, k] * X[t, b * p + l]
                pred += Gamma[b, k] * inner
            total += (Y[t, k] - pred) ** 2
    return total + lam * float(np.sum(V ** 2))


def products_loop(V, X, Y, p):
    n, K = Y.shape
    H = np.zeros((K, n, K))
    R = np.zeros((n, K))
    for k in range(K):
        for t in range(n):
            for b in range(K):
                H[k, t, b] = sum(V[b * p + l, k] * X[t, b * p + l] for l in range(p))
            R[t, k] = Y[t, k] - H[k, t, k]
            H[k, t, k] = 0.0
    return H, R


def central_difference(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def ols_stationarity(X, y, w, lam):
    return np.max(np.abs(X.T @ (X @ w - y) + lam * w))
