"""Numerical primitives shared by the learners.

Scaled-simplex projection, (monotone) FISTA with backtracking, closed-form
ridge solves, the lasso / group-lasso proximal operators and spectral-radius
estimation.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from .errors import InvalidInputError, NumericalFailure, SingularSystemError

_TINY = 1e-300


@dataclass(frozen=True)
class SimplexSpec:
    """The scaled simplex ``{u : u >= 0, sum(u) == mass}`` in ``dimension`` coordinates."""

    dimension: int
    mass: float = 1.0

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InvalidInputError(f"simplex dimension must be a positive integer, got {self.dimension}")
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise InvalidInputError(f"simplex mass must be positive, got {self.mass}")


@dataclass(frozen=True)
class FistaConfig:
    initial_step: float = 1.0
    backtrack_shrink: float = 0.5
    max_iterations: int = 5000
    objective_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.initial_step > 0:
            raise InvalidInputError("initial_step must be positive")
        if not 0.0 < self.backtrack_shrink < 1.0:
            raise InvalidInputError("backtrack_shrink must lie in (0, 1)")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be positive")
        if not self.objective_tolerance > 0:
            raise InvalidInputError("objective_tolerance must be positive")


@dataclass(frozen=True)
class RidgeProblem:
    """``argmin_w ||targets - design @ w||^2 + penalty * ||w||^2``.

    ``targets`` may be a vector or a matrix of independent right-hand sides.
    """

    design: np.ndarray
    targets: np.ndarray
    penalty: float

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2:
            raise InvalidInputError("design must be a 2-d array")
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(
                f"targets have {y.shape[0]} rows but design has {X.shape[0]}"
            )
        if not (np.isfinite(self.penalty) and self.penalty >= 0):
            raise InvalidInputError(f"ridge penalty must be non-negative, got {self.penalty}")
        if self.penalty == 0 and X.shape[1] > X.shape[0]:
            raise InvalidInputError("penalty > 0 is required when columns exceed rows")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "targets", y)


@dataclass
class FistaResult:
    x: np.ndarray
    objective: np.ndarray
    iterations: int
    converged: np.ndarray
    history: list = field(repr=False, default_factory=list)
    step: Optional[np.ndarray] = None
    last_change: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# projections and proximal operators
# ---------------------------------------------------------------------------

def _check_finite(a, what="input"):
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"non-finite entries in {what}")


def project_simplex(v, spec: SimplexSpec) -> np.ndarray:
    """Euclidean projection of ``v`` onto the ``spec.mass``-scaled simplex.

    Sort-and-threshold method; coordinates below the threshold come out as
    exact zeros.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != spec.dimension:
        raise InvalidInputError(
            f"expected a vector of length {spec.dimension}, got shape {v.shape}"
        )
    _check_finite(v)
    return project_simplex_columns(v[:, None], spec.mass)[:, 0]


def project_simplex_columns(M, mass=1.0) -> np.ndarray:
    """Project every column of ``M`` onto the ``mass``-scaled simplex."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    u = -np.sort(-M, axis=0)
    css = np.cumsum(u, axis=0) - mass
    ind = np.arange(1, n + 1)[:, None]
    cond = u - css / ind > 0
    # cond is true on a prefix; its length is the support size
    rho = n - np.argmax(cond[::-1], axis=0) - 1
    cols = np.arange(M.shape[1])
    theta = css[rho, cols] / (rho + 1.0)
    out = np.maximum(M - theta, 0.0)
    # renormalise against rounding so the mass is hit to machine precision
    s = out.sum(axis=0)
    fix = s > 0
    out[:, fix] *= mass / s[fix]
    return out


def soft_threshold(w, t):
    """Scalar (elementwise) soft-thresholding ``sign(w) * max(|w| - t, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("threshold must be non-negative")
    w = np.asarray(w, dtype=float)
    _check_finite(w)
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def group_soft_threshold(w, t) -> np.ndarray:
    """Block soft-thresholding ``w * max(1 - t / ||w||_2, 0)``.

    Returns the exact zero vector when ``||w||_2 <= t``.
    """
    if t < 0:
        raise InvalidInputError("threshold must be non-negative")
    w = np.asarray(w, dtype=float)
    _check_finite(w)
    nrm = np.linalg.norm(w)
    if nrm <= t:
        return np.zeros_like(w)
    return w * (1.0 - t / nrm)


def group_soft_threshold_blocks(W, t, block_size) -> np.ndarray:
    """Apply :func:`group_soft_threshold` to consecutive row blocks of every column.

    ``t`` may be a scalar or one threshold per column.
    """
    W = np.asarray(W, dtype=float)
    n, m = W.shape
    B = W.reshape(n // block_size, block_size, m)
    norms = np.sqrt(np.einsum("blm,blm->bm", B, B))
    t = np.broadcast_to(np.asarray(t, dtype=float), (m,))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > t, 1.0 - t / np.where(norms > 0, norms, 1.0), 0.0)
    return (B * scale[:, None, :]).reshape(n, m)


# ---------------------------------------------------------------------------
# accelerated proximal gradient
# ---------------------------------------------------------------------------

def proximal_gradient(
    smooth: Callable,
    gradient: Callable,
    prox: Callable,
    start,
    cfg: FistaConfig = FistaConfig(),
    penalty: Optional[Callable] = None,
    step=None,
) -> FistaResult:
    """Monotone FISTA with backtracking over the columns of ``start``.

    Each column is treated as an independent problem: ``smooth`` and
    ``penalty`` map an ``(n, m)`` matrix to ``m`` objective values,
    ``gradient`` returns an ``(n, m)`` matrix and ``prox(Z, steps)`` applies the
    proximal map of ``steps * penalty`` columnwise.  Each column keeps its own
    step size and stopping state, so the output is the same as running ``m``
    separate solves.

    A candidate iterate is only accepted when it does not increase the
    composite objective, which makes the objective sequence of every column
    non-increasing; a rejected candidate resets that column's momentum.  A
    column stops once the relative decrease of an accepted step drops below
    ``cfg.objective_tolerance``.
    """
    x = np.array(start, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[1]
    if penalty is None:
        def penalty(z):
            return np.zeros(z.shape[1])
    s = np.full(m, cfg.initial_step, dtype=float) if step is None else np.array(
        np.broadcast_to(step, (m,)), dtype=float)
    tol = cfg.objective_tolerance

    fx = np.asarray(smooth(x), dtype=float)
    Fx = fx + penalty(x)
    if not np.all(np.isfinite(Fx)):
        raise NumericalFailure("non-finite objective at the starting point", iteration=0)
    history = [Fx.copy()]
    x_prev = x.copy()
    y = x.copy()
    fy = fx
    t = np.ones(m)
    active = np.ones(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    change = np.full(m, np.inf)
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gy = gradient(y)
        while True:
            z = prox(y - s * gy, s)
            fz = np.asarray(smooth(z), dtype=float)
            d = z - y
            bound = fy + np.sum(d * gy, axis=0) + np.sum(d * d, axis=0) / (2.0 * s)
            bad = active & (fz > bound + 1e-12 * np.abs(bound))
            if not bad.any():
                break
            s[bad] *= cfg.backtrack_shrink
            if np.any(s[bad] < _TINY):
                raise NumericalFailure("backtracking step underflow", iteration=it)
        Fz = fz + penalty(z)
        if not np.all(np.isfinite(Fz[active])):
            raise NumericalFailure("non-finite objective encountered", iteration=it)
        accept = active & (Fz <= Fx)
        # a rejected momentum step restarts that column from x; it never counts
        # towards convergence
        restart = active & ~accept
        rel = (Fx - Fz) / np.maximum(np.abs(Fx), _TINY)
        change = np.where(accept, rel, change)
        done = accept & (rel <= tol)
        x_new = np.where(accept, z, x)
        F_new = np.where(accept, Fz, Fx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x_prev)
        x_prev = x_new
        x = x_new
        Fx = F_new
        t = np.where(restart, 1.0, t_new)
        history.append(Fx.copy())
        converged |= done
        active &= ~done
        if not active.any():
            break
        reset = ~active | restart
        y[:, reset] = x[:, reset]
        x_prev[:, reset] = x[:, reset]
        fy = np.asarray(smooth(y), dtype=float)
    return FistaResult(x=x, objective=Fx, iterations=it, converged=converged,
                       history=history, step=s, last_change=change)


def fista_projected(gradient_fn, project_fn, objective_fn, start,
                    cfg: FistaConfig = FistaConfig(), full_output=False):
    """Projected FISTA with backtracking for a single vector variable.

    ``project_fn`` maps a point to the feasible set; ``objective_fn`` and
    ``gradient_fn`` describe the smooth objective.  Returns the final feasible
    point (or the full :class:`FistaResult` with ``full_output=True``).
    """
    start = np.asarray(start, dtype=float)

    res = proximal_gradient(
        smooth=lambda Z: np.array([objective_fn(Z[:, 0])]),
        gradient=lambda Z: np.asarray(gradient_fn(Z[:, 0]), dtype=float)[:, None],
        prox=lambda Z, s: np.asarray(project_fn(Z[:, 0]), dtype=float)[:, None],
        start=start[:, None],
        cfg=cfg,
    )
    if full_output:
        return res
    return res.x[:, 0]


# ---------------------------------------------------------------------------
# ridge
# ---------------------------------------------------------------------------

def ridge_solve_gram(gram, moment, penalty, active=None):
    """Solve ``(gram + penalty I) w = moment`` restricted to ``active`` coordinates.

    Coordinates outside ``active`` get exactly zero weight.  ``moment`` may hold
    several right-hand sides as columns.
    """
    gram = np.asarray(gram, dtype=float)
    moment = np.asarray(moment, dtype=float)
    m = gram.shape[0]
    out = np.zeros(moment.shape)
    idx = np.arange(m) if active is None else np.flatnonzero(active)
    if idx.size == 0:
        return out
    G = gram[np.ix_(idx, idx)].copy()
    G[np.diag_indices_from(G)] += penalty
    try:
        c = linalg.cho_factor(G, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystemError(f"ridge normal equations are not positive definite: {exc}")
    out[idx] = linalg.cho_solve(c, moment[idx], check_finite=False)
    return out


def ridge_solve(problem: RidgeProblem) -> np.ndarray:
    """Closed-form ridge regression via Cholesky on the normal equations.

    Identically-zero design columns receive weight exactly 0 when the penalty
    is positive.
    """
    X, y, lam = problem.design, problem.targets, problem.penalty
    _check_finite(X, "design")
    _check_finite(y, "targets")
    if lam > 0:
        active = np.any(X != 0, axis=0)
    else:
        active = None
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise SingularSystemError("rank-deficient design with zero ridge penalty")
    return ridge_solve_gram(X.T @ X, X.T @ y, lam, active=active)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

EXACT_EIG_MAX_DIM = 64


def spectral_radius(M, tol=1e-8, max_iterations=10000, restarts=3, seed=0) -> float:
    """Largest eigenvalue modulus of a square matrix.

    Uses a dense eigen-solve up to dimension 64 and an Arnoldi iteration with
    random restarts above that (plain power iteration stalls on the complex
    conjugate dominant pairs that companion matrices routinely have).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError("spectral_radius expects a square matrix")
    _check_finite(M, "matrix")
    n = M.shape[0]
    if n == 0 or not np.any(M):
        return 0.0
    if n <= EXACT_EIG_MAX_DIM:
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        v0 = rng.standard_normal(n)
        try:
            vals = eigs(M, k=1, which="LM", v0=v0, tol=tol,
                        maxiter=max_iterations, return_eigenvectors=False)
            return float(np.abs(vals[0]))
        except ArpackNoConvergence:
            continue
    raise NumericalFailure(
        f"spectral radius did not converge after {restarts} restarts", iteration=max_iterations
    )
