"""Comparison learners: univariate AR, ridge VAR, lasso-Granger and group-lasso-Granger.

All four decompose into independent per-task problems.  AR and VARL2 have
closed-form ridge solutions; VARL1 and VARLG are solved by proximal FISTA on
the shared Gram matrix of the lag design, one column per task.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LagDesign
from .errors import InvalidInputError, NumericalFailure
from .model import VarModel
from .optim import (FistaConfig, group_soft_threshold_blocks, proximal_gradient,
                    ridge_solve_gram, soft_threshold)

BASELINE_SOLVER = FistaConfig(max_iterations=5000, objective_tolerance=1e-8)


class ConvergenceError(NumericalFailure):
    """Proximal solver hit its iteration cap; ``relative_change`` is the last objective change."""

    def __init__(self, message, relative_change=None, iteration=None):
        super().__init__(message, iteration=iteration)
        self.relative_change = relative_change


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float
    solver: FistaConfig = field(default=BASELINE_SOLVER)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError(f"lambda must be non-negative, got {self.lam}")


def _as_config(cfg) -> PenaltyConfig:
    return cfg if isinstance(cfg, PenaltyConfig) else PenaltyConfig(float(cfg))


def _names(design, series_names):
    return tuple(series_names) if series_names is not None else tuple(
        f"y{k + 1}" for k in range(design.K))


class GramCache:
    """``X'X``, ``X'Y`` and ``Y'Y`` of a lag design, computed once."""

    def __init__(self, design: LagDesign):
        X, Y = design.inputs, design.outputs
        self.XtX = X.T @ X
        self.XtY = X.T @ Y
        self.yty = np.einsum("tk,tk->k", Y, Y)
        self._lmax = None

    @property
    def lipschitz(self) -> float:
        if self._lmax is None:
            self._lmax = float(np.linalg.eigvalsh(self.XtX)[-1]) if self.XtX.size else 0.0
        return 2.0 * self._lmax


def _gram(design, gram):
    return gram if gram is not None else GramCache(design)


def fit_ar(design: LagDesign, lam: float, series_names=None, gram=None) -> VarModel:
    """Per-series ridge on its own ``p`` lags; every off-diagonal block is exactly zero."""
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    p, K = design.lag_order, design.K
    g = _gram(design, gram)
    W = np.zeros((K * p, K))
    for k in range(K):
        sl = slice(k * p, (k + 1) * p)
        W[sl, k] = ridge_solve_gram(g.XtX[sl, sl], g.XtY[sl, k], lam)
    return VarModel(W, p, _names(design, series_names), "ar", hyperparameters={"lambda": lam})


def fit_varl2(design: LagDesign, lam: float, series_names=None, gram=None) -> VarModel:
    if lam < 0:
        raise InvalidInputError("lambda must be non-negative")
    g = _gram(design, gram)
    W = ridge_solve_gram(g.XtX, g.XtY, lam)
    return VarModel(W, design.lag_order, _names(design, series_names), "varl2",
                    hyperparameters={"lambda": lam})


def _squared_loss(g: GramCache):
    def smooth(W):
        return g.yty - 2.0 * np.einsum("ik,ik->k", g.XtY, W) + np.einsum(
            "ik,ik->k", W, g.XtX @ W)

    def gradient(W):
        return 2.0 * (g.XtX @ W - g.XtY)
    return smooth, gradient


def lasso_objective(design: LagDesign, W, lam) -> np.ndarray:
    """Per-task ``||y - Xw||^2 + lam ||w||_1``."""
    R = design.outputs - design.inputs @ W
    return np.sum(R * R, axis=0) + lam * np.sum(np.abs(W), axis=0)


def group_lasso_objective(design: LagDesign, W, lam) -> np.ndarray:
    """Per-task ``||y - Xw||^2 + lam * sum_b ||w_b||_2`` over the lag blocks."""
    p, K = design.lag_order, design.K
    R = design.outputs - design.inputs @ W
    norms = np.sqrt(np.sum(np.asarray(W).reshape(K, p, -1) ** 2, axis=1))
    return np.sum(R * R, axis=0) + lam * norms.sum(axis=0)


def _solve_prox(design, cfg, g, penalty, prox, start, tag, series_names, strict=True):
    smooth, gradient = _squared_loss(g)
    Kp, K = design.inputs.shape[1], design.K
    W0 = np.zeros((Kp, K)) if start is None else np.array(start, dtype=float)
    L = g.lipschitz
    step = min(cfg.solver.initial_step, 1.0 / L) if L > 0 else cfg.solver.initial_step
    res = proximal_gradient(smooth, gradient, prox, W0, cfg.solver, penalty=penalty, step=step)
    converged = bool(res.converged.all())
    if not converged:
        worst = float(np.max(res.last_change[~res.converged]))
        msg = (f"{tag} did not reach tolerance {cfg.solver.objective_tolerance:g} in "
               f"{res.iterations} iterations (relative change {worst:.3g})")
        if strict:
            raise ConvergenceError(msg, relative_change=worst, iteration=res.iterations)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return VarModel(res.x, design.lag_order, _names(design, series_names), tag,
                    hyperparameters={"lambda": cfg.lam, "converged": converged})


def fit_varl1(design: LagDesign, cfg, series_names=None, gram=None, start=None,
              strict=True) -> VarModel:
    """Lasso VAR, ``||y_k - X w_k||^2 + lam ||w_k||_1`` per task.

    ``start`` warm-starts the solver (the problem is convex, so only speed is
    affected).  With ``strict=False`` an iterate that hit the iteration cap is
    returned with a ``RuntimeWarning`` instead of raising
    :class:`ConvergenceError`.
    """
    cfg = _as_config(cfg)
    lam = cfg.lam
    g = _gram(design, gram)
    return _solve_prox(
        design, cfg, g,
        penalty=lambda W: lam * np.sum(np.abs(W), axis=0),
        prox=lambda Z, s: soft_threshold(Z, s * lam),
        start=start, tag="varl1", series_names=series_names, strict=strict)


def fit_varlg(design: LagDesign, cfg, series_names=None, gram=None, start=None,
              strict=True) -> VarModel:
    """Group-lasso VAR with one group per lag block ``w_{b,k}``."""
    cfg = _as_config(cfg)
    lam, p, K = cfg.lam, design.lag_order, design.K
    g = _gram(design, gram)

    def penalty(W):
        return lam * np.sqrt(np.sum(W.reshape(K, p, -1) ** 2, axis=1)).sum(axis=0)

    return _solve_prox(
        design, cfg, g, penalty=penalty,
        prox=lambda Z, s: group_soft_threshold_blocks(Z, s * lam, p),
        start=start, tag="varlg", series_names=series_names, strict=strict)
