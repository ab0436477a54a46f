"""Synthetic VAR systems with planted leading-indicator structure.

Six designs:

1. ``K=10``, every series driven by its own past only.
2. ``K=10``, fully connected VAR.
3. ``K=10``, two clusters of five series, each cluster led by one of its members.
4. ``K=30``, three clusters of ten series, each led by two members.
5. ``K=50``, five such clusters.
6. ``K=100``, ten such clusters.

Coefficients are drawn uniformly from ``[-1, -0.2] U [0.2, 1]`` on every lag of
every structurally active block and then shrunk by a common factor until the
companion matrix has spectral radius at most 0.95.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import TimeSeriesPanel
from .errors import GenerationError, InvalidInputError, StationarityViolation
from .model import GrangerGraph, VarModel, model_to_dict
from .optim import spectral_radius

TRUE_LAG = 5
SPECTRAL_TARGET = 0.95
RESCALE_FACTOR = 0.95
BURN_IN = 500
_SYSTEM_STREAM = 0
_SIMULATION_STREAM = 1


@dataclass(frozen=True)
class Cluster:
    members: tuple
    leaders: tuple


@dataclass(frozen=True)
class SyntheticDesign:
    design_id: int
    K: int
    clusters: tuple = ()
    full: bool = False
    p_true: int = TRUE_LAG
    fixed_rank: Optional[int] = None

    @property
    def mask(self) -> np.ndarray:
        """``K x K`` boolean; ``mask[b, k]`` is true where block ``(b, k)`` is active."""
        if self.full:
            return np.ones((self.K, self.K), dtype=bool)
        M = np.eye(self.K, dtype=bool)
        for c in self.clusters:
            for b in c.leaders:
                for k in c.members:
                    if k not in c.leaders:
                        M[b, k] = True
        return M

    @property
    def leaders(self) -> tuple:
        return tuple(b for c in self.clusters for b in c.leaders)

    def truth_graph(self, names=None) -> GrangerGraph:
        names = names or [f"y{k + 1}" for k in range(self.K)]
        return GrangerGraph(tuple(names), self.mask)

    def to_dict(self) -> dict:
        return {"design_id": self.design_id, "K": self.K, "p_true": self.p_true,
                "full": self.full, "fixed_rank": self.fixed_rank,
                "clusters": [{"members": list(c.members), "leaders": list(c.leaders)}
                             for c in self.clusters]}

    @classmethod
    def from_dict(cls, d) -> "SyntheticDesign":
        cl = tuple(Cluster(tuple(c["members"]), tuple(c["leaders"])) for c in d.get("clusters", []))
        return cls(int(d["design_id"]), int(d["K"]), cl, bool(d.get("full", False)),
                   int(d.get("p_true", TRUE_LAG)), d.get("fixed_rank"))


def _clusters(n_clusters, size, n_leaders):
    return tuple(Cluster(tuple(range(c * size, (c + 1) * size)),
                         tuple(range(c * size, c * size + n_leaders)))
                 for c in range(n_clusters))


def make_design(design_id: int) -> SyntheticDesign:
    if design_id == 1:
        return SyntheticDesign(1, 10)
    if design_id == 2:
        return SyntheticDesign(2, 10, full=True)
    if design_id == 3:
        return SyntheticDesign(3, 10, _clusters(2, 5, 1))
    if design_id in (4, 5, 6):
        n = {4: 3, 5: 5, 6: 10}[design_id]
        return SyntheticDesign(design_id, 10 * n, _clusters(n, 10, 2),
                               fixed_rank=None if design_id == 4 else n)
    raise InvalidInputError(f"design id must be in 1..6, got {design_id!r}")


@dataclass(frozen=True)
class TrueSystem:
    coefficients: np.ndarray
    design: SyntheticDesign
    seed: int
    noise_scale: float = 1.0

    @property
    def K(self) -> int:
        return self.design.K

    @property
    def p(self) -> int:
        return self.coefficients.shape[0] // self.design.K

    def to_document(self) -> dict:
        model = oracle_forecaster(self)
        return {"design": self.design.to_dict(), "seed": int(self.seed),
                "noise_scale": float(self.noise_scale), "model": model_to_dict(model)}

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1)


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def companion_matrix(W, K, p) -> np.ndarray:
    """First-order (``Kp x Kp``) form of the VAR with weights ``W`` (layout as in :class:`VarModel`)."""
    W = np.asarray(W, dtype=float)
    if W.shape != (K * p, K):
        raise InvalidInputError(f"weights must be {K * p} x {K}")
    A = np.transpose(W.reshape(K, p, K), (1, 2, 0))   # A[l] : K x K
    C = np.zeros((K * p, K * p))
    C[:K, :] = np.concatenate(list(A), axis=1)
    if p > 1:
        C[K:, :-K] = np.eye(K * (p - 1))
    return C


def generate_system(design: SyntheticDesign, seed: int, max_rescales: int = 10000) -> TrueSystem:
    rng = _rng(seed, _SYSTEM_STREAM)
    K, p = design.K, design.p_true
    mask = design.mask
    mag = rng.uniform(0.2, 1.0, size=(K, p, K))
    sign = rng.choice([-1.0, 1.0], size=(K, p, K))
    W = (mag * sign * mask[:, None, :]).reshape(K * p, K)
    for _ in range(max_rescales):
        if spectral_radius(companion_matrix(W, K, p)) <= SPECTRAL_TARGET:
            return TrueSystem(W, design, int(seed))
        W = W * RESCALE_FACTOR
    raise GenerationError(f"could not make design {design.design_id} stationary (seed {seed})")


def simulate(system: TrueSystem, length: int, burn_in: int = BURN_IN, seed: int = 0,
             noise_scale: Optional[float] = None, names=None) -> TimeSeriesPanel:
    """Simulate ``length`` observations after discarding ``burn_in`` from a zero start."""
    if burn_in < 100:
        raise InvalidInputError("burn_in must be at least 100")
    K, p = system.K, system.p
    scale = system.noise_scale if noise_scale is None else noise_scale
    rng = _rng(seed, _SIMULATION_STREAM)
    n = burn_in + length
    E = rng.standard_normal((n, K)) * scale
    A = np.transpose(system.coefficients.reshape(K, p, K), (1, 2, 0))
    Y = np.zeros((n + p, K))
    for t in range(n):
        s = t + p
        y = E[t].copy()
        for l in range(p):
            y += A[l] @ Y[s - l - 1]
        Y[s] = y
        if not np.all(np.abs(y) <= 1e8):
            raise StationarityViolation(f"simulation diverged at step {t}", iteration=t)
    names = names or [f"y{k + 1}" for k in range(K)]
    return TimeSeriesPanel(Y[p + burn_in:], tuple(names), "synthetic")


def oracle_forecaster(system: TrueSystem, names=None) -> VarModel:
    names = names or [f"y{k + 1}" for k in range(system.K)]
    return VarModel(system.coefficients, system.p, tuple(names), "oracle")
