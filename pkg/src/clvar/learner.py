"""VAR learning with task clustering around leading indicators (CLVAR).

The parameter matrix ``W`` is written blockwise as ``w_{b,k} = gamma_{b,k} v_{b,k}``
with a non-negative structure matrix ``Gamma = A - diag(A) + I``.  Two modes are
supported:

* ``shared``: every column of ``A`` equals one vector ``alpha`` on the
  ``kappa``-simplex, so the whole system shares its leading indicators.
* ``clustered``: ``A = D G`` with dictionary columns on the ``kappa``-simplex
  (sparse cluster prototypes) and per-task mixing weights on the unit simplex.

Fitting alternates a per-task ridge solve for ``V`` (step 1) with projected
FISTA solves for the structure (step 2) until the objective
``||Y - X W||_F^2 + lam ||V||_F^2`` settles.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dpotrf as _potrf, dpotrs as _potrs

from . import _kernels
from .baselines import GramCache
from .data import LagDesign
from .errors import InvalidInputError, NumericalFailure, SingularSystemError
from .model import VarModel
from .optim import FistaConfig

INNER_SOLVER = FistaConfig(max_iterations=5000, objective_tolerance=1e-8)
MODES = ("shared", "clustered")


@dataclass(frozen=True)
class ClvarHyperparams:
    lam: float
    kappa: float = 1.0
    rank: int = 1
    outer_tolerance: float = 1e-5
    max_outer_iterations: int = 200
    inner: FistaConfig = field(default=INNER_SOLVER)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise InvalidInputError(f"kappa must be positive, got {self.kappa}")
        if int(self.rank) != self.rank or self.rank < 1:
            raise InvalidInputError(f"rank must be a positive integer, got {self.rank}")
        if not self.outer_tolerance > 0 or self.max_outer_iterations < 1:
            raise InvalidInputError("invalid outer-loop settings")

    def check(self, K):
        if self.rank > K:
            raise InvalidInputError(f"rank {self.rank} exceeds the number of series {K}")


def gamma_from_A(A) -> np.ndarray:
    """``A - diag(A) + I``: the diagonal is set to exactly 1."""
    G = np.array(A, dtype=float)
    np.fill_diagonal(G, 1.0)
    return G


@dataclass(frozen=True)
class ClvarFactors:
    """Structure matrices of a CLVAR fit.

    In shared mode ``D`` is the single column ``alpha`` and ``G`` is a row of
    ones, so ``A = D G`` holds in both modes.
    """

    V: np.ndarray
    D: np.ndarray
    G: np.ndarray
    kappa: float
    mode: str = "clustered"

    @property
    def A(self) -> np.ndarray:
        return self.D @ self.G

    @property
    def Gamma(self) -> np.ndarray:
        return gamma_from_A(self.A)

    @property
    def alpha(self) -> np.ndarray:
        if self.mode != "shared":
            raise AttributeError("alpha is only defined in shared mode")
        return self.D[:, 0]

    def to_dict(self) -> dict:
        def lst(M):
            return [[float(x) for x in row] for row in np.asarray(M)]
        return {"mode": self.mode, "kappa": float(self.kappa), "V": lst(self.V),
                "A": lst(self.A), "D": lst(self.D), "G": lst(self.G),
                "Gamma": lst(self.Gamma)}

    @classmethod
    def from_dict(cls, d) -> "ClvarFactors":
        return cls(np.array(d["V"], dtype=float), np.array(d["D"], dtype=float),
                   np.array(d["G"], dtype=float), float(d["kappa"]), d.get("mode", "clustered"))


@dataclass
class FitTrace:
    objectives: list = field(default_factory=list)
    step_objectives: list = field(default_factory=list)   # (after step 1, after step 2)
    elapsed: list = field(default_factory=list)           # seconds since start, per entry
    iterations: int = 0
    seconds: float = 0.0
    converged: bool = False

    def to_csv(self) -> str:
        lines = ["iteration,objective,seconds"]
        lines += [f"{i},{f!r},{s:.6f}" for i, (f, s) in enumerate(zip(self.objectives,
                                                                       self.elapsed))]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def expand_blocks(Gamma, p) -> np.ndarray:
    """Repeat every row of ``Gamma`` ``p`` times to align it with the rows of ``V``."""
    return np.repeat(np.asarray(Gamma, dtype=float), p, axis=0)


def assemble_W(factors, p) -> np.ndarray:
    """``W`` with block ``(b, k)`` equal to ``gamma_{b,k} * v_{b,k}``."""
    if isinstance(factors, ClvarFactors):
        Gamma, V = factors.Gamma, factors.V
    else:
        Gamma, V = factors
    return expand_blocks(Gamma, p) * np.asarray(V, dtype=float)


def clvar_objective(factors, design: LagDesign, lam) -> float:
    if isinstance(factors, ClvarFactors):
        V = factors.V
    else:
        V = factors[1]
    W = assemble_W(factors, design.lag_order)
    R = design.outputs - design.inputs @ W
    return float(np.sum(R * R) + lam * np.sum(np.asarray(V) ** 2))


def step1_solve_V(Gamma, design: LagDesign, lam, gram: Optional[GramCache] = None) -> np.ndarray:
    """Per-task ridge regression on the block-reweighted inputs.

    Task ``k`` regresses ``y_k`` on ``Z_k = X * gamma_{., k}`` (block-expanded);
    blocks with zero weight drop out and get exactly zero parameters.
    """
    if not lam > 0:
        raise InvalidInputError("step 1 needs a positive ridge penalty")
    g = gram if gram is not None else GramCache(design)
    p, K = design.lag_order, design.K
    m = K * p
    E = expand_blocks(Gamma, p).T                       # (K, Kp): task k's block weights
    n = design.n_rows
    if n * n * (m + n / 3.0) < m ** 3 / 3.0:
        # forming T' x T' kernels is cheaper than factorising Kp x Kp Grams
        return _step1_dual(E, design, lam)
    M = np.empty((K, m, m))
    np.multiply(g.XtX[None, :, :], E[:, :, None], out=M)
    M *= E[:, None, :]
    M.reshape(K, -1)[:, ::m + 1] += lam
    rhs = E * g.XtY.T
    inactive = E == 0
    if inactive.any():
        # decouple dropped coordinates so they solve to exactly zero
        kk, ii = np.nonzero(inactive)
        M[kk, ii, :] = 0.0
        M[kk, :, ii] = 0.0
        M[kk, ii, ii] = 1.0
        rhs[kk, ii] = 0.0
    V = np.empty((m, K))
    for k in range(K):
        # M[k] is symmetric, so its transpose is a Fortran-ordered view LAPACK uses in place
        c, info = _potrf(M[k].T, lower=False, overwrite_a=True, clean=False)
        if info != 0:
            raise SingularSystemError(f"step-1 ridge system for task {k} is not positive definite")
        V[:, k], _ = _potrs(c, rhs[k], lower=False)
    V[inactive.T] = 0.0
    return V


def _step1_dual(E, design: LagDesign, lam) -> np.ndarray:
    """Step 1 through the ``T' x T'`` kernel systems ``(Z Z' + lam I) a = y``, ``v = Z'a``.

    Cheaper than the Gram form when there are fewer rows than coefficients;
    zero-weight coordinates get exactly zero parameters since their columns of Z vanish.
    """
    X, Y = design.inputs, design.outputs
    n = X.shape[0]
    Z = np.empty((E.shape[0], n, X.shape[1]))          # (K, T', Kp), C-ordered for matmul
    np.multiply(X[None, :, :], E[:, None, :], out=Z)
    Kmat = np.matmul(Z, Z.transpose(0, 2, 1))
    Kmat.reshape(Kmat.shape[0], -1)[:, ::n + 1] += lam
    V = np.empty((X.shape[1], E.shape[0]))
    for k in range(E.shape[0]):
        c, info = _potrf(Kmat[k].T, lower=False, overwrite_a=True, clean=False)
        if info != 0:
            raise SingularSystemError(f"step-1 ridge system for task {k} is not positive definite")
        a, _ = _potrs(c, Y[:, k], lower=False)
        V[:, k] = Z[k].T @ a
    return V


def step2_build_H_R(V, design: LagDesign):
    """Input products and own-history residuals.

    Returns ``H`` of shape ``(K, T', K)`` with ``H[k, t, b] = <v_{b,k}, x_{t,b}>``
    and the own-history entries ``H[k, :, k]`` zeroed, and ``R`` (``T' x K``) with
    ``R[t, k] = y_{t,k} - <v_{k,k}, x_{t,k}>``.
    """
    p, K = design.lag_order, design.K
    n = design.n_rows
    Xb = design.inputs.reshape(n, K, p).transpose(1, 0, 2)      # (b, t, l)
    Vb = np.asarray(V, dtype=float).reshape(K, p, K)            # (b, l, k)
    H = np.ascontiguousarray(np.matmul(Xb, Vb).transpose(2, 1, 0))
    idx = np.arange(K)
    own = H[idx, :, idx].T              # (T', K)
    R = design.outputs - own
    H[idx, :, idx] = 0.0
    return H, R


def structure_grams(H, R):
    """Per-task ``Q_k = H_k'H_k``, ``c_k = H_k'r_k`` and ``||r_k||^2``."""
    H = np.ascontiguousarray(H)
    Q = np.matmul(np.transpose(H, (0, 2, 1)), H)
    C = np.matmul(np.transpose(H, (0, 2, 1)), R.T[:, :, None])[:, :, 0]
    rr = np.einsum("tk,tk->k", R, R)
    return Q, C, rr


# reference objective/gradient forms (direct, no Gram matrices) -------------

def alpha_objective(alpha, H, R) -> float:
    res = R.T - np.einsum("ktb,b->kt", H, alpha)
    return float(np.sum(res * res))


def alpha_gradient(alpha, H, R) -> np.ndarray:
    res = R.T - np.einsum("ktb,b->kt", H, alpha)
    return -2.0 * np.einsum("ktb,kt->b", H, res)


def g_objective(g, Hk, D, rk) -> float:
    res = rk - Hk @ (D @ g)
    return float(res @ res)


def g_gradient(g, Hk, D, rk) -> np.ndarray:
    res = rk - Hk @ (D @ g)
    return -2.0 * D.T @ (Hk.T @ res)


def d_objective(D, H, R, G) -> float:
    A = D @ G
    res = R.T - np.einsum("ktb,bk->kt", H, A)
    return float(np.sum(res * res))


def d_gradient(D, H, R, G) -> np.ndarray:
    A = D @ G
    res = R.T - np.einsum("ktb,bk->kt", H, A)
    return -2.0 * np.einsum("ktb,kt->bk", H, res) @ G.T


def dictionary_design_matrix(H, G) -> np.ndarray:
    """Materialised ``G_hat * H_hat`` acting on the column-stacked ``vec(D)``.

    ``H_hat = 1_r' kron H`` repeats the stacked product matrix once per atom
    and ``G_hat = G' kron (1_T 1_K')`` broadcasts the task weights.  Only used
    for checking; the solvers never form it.
    """
    K, n, _ = H.shape
    r = G.shape[0]
    Hs = H.reshape(K * n, K)
    H_hat = np.kron(np.ones((1, r)), Hs)
    G_hat = np.kron(G.T, np.ones((n, K)))
    return G_hat * H_hat


def step2_solve_alpha(H, R, kappa, start=None, cfg: FistaConfig = INNER_SOLVER, grams=None):
    """``alpha = argmin ||vec(R) - H_stacked alpha||^2`` on the ``kappa``-simplex."""
    K = H.shape[0]
    a0 = np.full(K, kappa / K) if start is None else np.asarray(start, dtype=float)
    D = step2_solve_D(H, R, np.ones((1, K)), kappa, start=a0[:, None], cfg=cfg, grams=grams)
    return D[:, 0]


def step2_solve_G(H, R, D, start=None, cfg: FistaConfig = INNER_SOLVER, grams=None):
    """Every column ``g_k = argmin ||r_k - H_k D g||^2`` on the unit simplex."""
    K = H.shape[0]
    r = D.shape[1]
    G0 = np.full((r, K), 1.0 / r) if start is None else np.asarray(start, dtype=float)
    if r == 1:
        return np.ones((1, K))
    Q, C, rr = grams if grams is not None else structure_grams(H, R)
    P = np.matmul(np.matmul(D.T, Q), D)
    q = C @ D
    try:
        X, F, it, conv = _kernels.batched_simplex_qp(
            np.ascontiguousarray(P), np.ascontiguousarray(q), np.ascontiguousarray(rr),
            np.ascontiguousarray(G0.T), 1.0, cfg.backtrack_shrink, cfg.max_iterations,
            cfg.objective_tolerance)
    except FloatingPointError as exc:
        raise NumericalFailure(f"G subproblem failed: {exc}")
    return np.ascontiguousarray(X.T)


def step2_solve_D(H, R, G, kappa, start=None, cfg: FistaConfig = INNER_SOLVER, grams=None):
    """``vec(D) = argmin ||vec(R) - (G_hat * H_hat) vec(D)||^2``, columns on the ``kappa``-simplex."""
    K = H.shape[0]
    r = G.shape[0]
    D0 = np.full((K, r), kappa / K) if start is None else np.asarray(start, dtype=float)
    Q, C, rr = grams if grams is not None else structure_grams(H, R)
    try:
        D, F, it, conv = _kernels.dictionary_simplex_qp(
            np.ascontiguousarray(Q), np.ascontiguousarray(C), float(rr.sum()),
            np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(D0), float(kappa),
            cfg.backtrack_shrink, cfg.max_iterations, cfg.objective_tolerance)
    except FloatingPointError as exc:
        raise NumericalFailure(f"D subproblem failed: {exc}")
    return D


def initial_factors(K, p, hp: ClvarHyperparams, mode: str) -> ClvarFactors:
    """Even starting point for the structure matrices.

    Dictionary columns start at ``kappa / K`` everywhere.  In clustered mode the
    mixing weights put half of each task's mass evenly on all atoms and half
    on atom ``k mod r``: starting both ``D`` and ``G`` exactly uniform is a fixed
    point of the symmetric subspace (all atoms would stay identical), so the
    interleaved half lets the atoms separate.
    """
    V = np.zeros((K * p, K))
    if mode == "shared":
        return ClvarFactors(V, np.full((K, 1), hp.kappa / K), np.ones((1, K)), hp.kappa, "shared")
    r = int(hp.rank)
    G = np.full((r, K), 0.5 / r)
    G[np.arange(K) % r, np.arange(K)] += 0.5
    if r == 1:
        G = np.ones((1, K))
    return ClvarFactors(V, np.full((K, r), hp.kappa / K), G, hp.kappa, "clustered")


def fit_clvar(design: LagDesign, hp: ClvarHyperparams, mode: str = "clustered",
              series_names=None, gram: Optional[GramCache] = None):
    """Alternating descent for the CLVAR problem.

    Returns ``(model, factors, trace)``.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if design.n_rows < 1:
        raise InvalidInputError("empty design")
    K, p = design.K, design.lag_order
    hp.check(K)
    g = gram if gram is not None else GramCache(design)
    names = tuple(series_names) if series_names is not None else tuple(
        f"y{k + 1}" for k in range(K))

    t0 = time.perf_counter()
    fac = initial_factors(K, p, hp, mode)
    D, G, V = fac.D, fac.G, fac.V
    trace = FitTrace()
    Gamma = gamma_from_A(D @ G)
    prev = clvar_objective((Gamma, V), design, hp.lam)
    trace.objectives.append(prev)
    trace.elapsed.append(time.perf_counter() - t0)
    for it in range(1, hp.max_outer_iterations + 1):
        try:
            V = step1_solve_V(Gamma, design, hp.lam, g)
            f1 = clvar_objective((Gamma, V), design, hp.lam)
            if not np.isfinite(f1):
                raise NumericalFailure("non-finite CLVAR objective after step 1")
            H, R = step2_build_H_R(V, design)
            grams = structure_grams(H, R)
            if mode == "clustered":
                G = step2_solve_G(H, R, D, start=G, cfg=hp.inner, grams=grams)
            D = step2_solve_D(H, R, G, hp.kappa, start=D, cfg=hp.inner, grams=grams)
            Gamma = gamma_from_A(D @ G)
            f2 = clvar_objective((Gamma, V), design, hp.lam)
            if not np.isfinite(f2):
                raise NumericalFailure("non-finite CLVAR objective after step 2")
        except NumericalFailure as exc:
            trace.iterations = it
            trace.seconds = time.perf_counter() - t0
            exc.iteration, exc.trace = it, trace
            raise
        trace.step_objectives.append((f1, f2))
        trace.objectives.append(f2)
        trace.elapsed.append(time.perf_counter() - t0)
        trace.iterations = it
        if abs(prev - f2) <= hp.outer_tolerance * abs(prev):
            trace.converged = True
            break
        prev = f2
    trace.seconds = time.perf_counter() - t0
    factors = ClvarFactors(V, D, G, hp.kappa, mode)
    W = assemble_W((Gamma, V), p)
    hyper = {"lambda": hp.lam, "kappa": hp.kappa, "mode": mode}
    hyper["rank"] = int(hp.rank) if mode == "clustered" else 1
    model = VarModel(W, p, names, "clvar" if mode == "clustered" else "clvar-shared",
                     factors=factors, hyperparameters=hyper)
    return model, factors, trace
