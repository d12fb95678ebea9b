"""Problem configuration and synthetic Gaussian task generation.

An experiment is described by :class:`ExperimentConfig`: ``T`` tasks, ambient
dimension ``p``, observed dimension ``k``, per-task sample counts ``n_t``, a
similarity level ``rho`` in [0, 1], the two regularization strengths, the
loss/model kinds and a seed.  Tasks share a hidden structure: each task's
hidden vector is ``xi_t = sigma * v_t + v_0`` with ``sigma = sqrt(1/rho - 1)``,
where ``v_0`` (shared) and ``v_t`` (task-specific) are independent uniform
draws from the unit sphere.  Labels are produced from the FULL p-dimensional
Gaussian feature rows, while the learner only ever sees the first ``k``
columns -- that truncation is the misspecification under study.

Randomness uses counter-based Philox generators keyed by
``(seed, stream_tag, index)`` so that every stream is independent and the
whole ensemble is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

__all__ = [
    "ExperimentConfig",
    "TaskEnsemble",
    "generate_ensemble",
    "unit_sphere_vector",
    "rng_stream",
]

LOSS_KINDS = ("squared", "logistic")
MODEL_KINDS = ("linear_regression", "binary_classification")

# Stable integer ids for the named randomness streams.
_STREAM_TAGS = {"shared_vector": 0, "task_vector": 1, "features": 2, "trial": 3}


def rng_stream(seed: int, tag: str, index: int = 0) -> Generator:
    """Independent counter-based generator for stream ``tag`` under ``seed``.

    Distinct ``(seed, tag, index)`` triples give statistically independent
    streams; identical triples reproduce the same draws bit for bit.
    """
    try:
        tag_id = _STREAM_TAGS[tag]
    except KeyError:
        raise ValueError(f"unknown stream tag {tag!r}; expected one of {sorted(_STREAM_TAGS)}") from None
    return Generator(Philox(SeedSequence(entropy=(int(seed), tag_id, int(index)))))


def trial_seeds(base_seed: int, n_trials: int) -> np.ndarray:
    """Deterministic per-trial 64-bit seeds derived from a base seed."""
    ss = SeedSequence(entropy=(int(base_seed), _STREAM_TAGS["trial"]))
    return ss.generate_state(n_trials, dtype=np.uint64)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one synthetic multi-task problem.

    ``samples_per_task`` may be given as a single int (replicated across
    tasks) or a sequence of length ``num_tasks``.  Derived quantities
    (``alphas = p/n_t``, ``kappas = k/n_t``, ``sigma``) are recomputed on
    access, never stored.
    """

    num_tasks: int
    ambient_dim: int
    known_dim: int
    samples_per_task: tuple[int, ...]
    rho: float
    gamma1: float
    gamma2: float
    loss_kind: str = "squared"
    model_kind: str = "linear_regression"
    seed: int = 0

    def __post_init__(self):
        n = self.samples_per_task
        if isinstance(n, (int, np.integer)):
            n = (int(n),) * self.num_tasks
        else:
            n = tuple(int(v) for v in n)
        object.__setattr__(self, "samples_per_task", n)
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if self.ambient_dim < 1 or self.known_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.known_dim > self.ambient_dim:
            raise ValueError(f"known_dim={self.known_dim} exceeds ambient_dim={self.ambient_dim}")
        if len(n) != self.num_tasks:
            raise ValueError(f"samples_per_task has length {len(n)}, expected {self.num_tasks}")
        if any(v < 1 for v in n):
            raise ValueError("samples_per_task entries must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("regularization strengths must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if int(self.seed) < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.gamma1 == 0.0 and self.loss_kind == "logistic":
            warnings.warn(
                "gamma1 = 0 with the logistic loss: the minimizer may not exist "
                "on separable data; training can diverge",
                RuntimeWarning,
                stacklevel=2,
            )

    # -- derived quantities -------------------------------------------------
    @property
    def alphas(self) -> np.ndarray:
        """Per-task p / n_t."""
        return self.ambient_dim / np.asarray(self.samples_per_task, dtype=float)

    @property
    def kappas(self) -> np.ndarray:
        """Per-task k / n_t."""
        return self.known_dim / np.asarray(self.samples_per_task, dtype=float)

    @property
    def sigma(self) -> float:
        """Dissimilarity scale sqrt(1/rho - 1); infinite at rho = 0."""
        if self.rho == 0.0:
            return float("inf")
        return float(np.sqrt(1.0 / self.rho - 1.0))

    @property
    def is_symmetric(self) -> bool:
        return len(set(self.samples_per_task)) == 1

    def replace(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace as _replace

        return _replace(self, **changes)

    # -- serialization ------------------------------------------------------
    def to_mapping(self) -> dict:
        return {
            "num_tasks": self.num_tasks,
            "ambient_dim": self.ambient_dim,
            "known_dim": self.known_dim,
            "samples_per_task": list(self.samples_per_task),
            "rho": self.rho,
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "loss_kind": self.loss_kind,
            "model_kind": self.model_kind,
            "seed": self.seed,
        }

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentConfig":
        known = {
            "num_tasks", "ambient_dim", "known_dim", "samples_per_task",
            "rho", "gamma1", "gamma2", "loss_kind", "model_kind", "seed",
        }
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        missing = {"num_tasks", "ambient_dim", "known_dim", "samples_per_task", "rho"} - set(data)
        if missing:
            raise ValueError(f"missing experiment keys: {sorted(missing)}")
        kwargs = dict(data)
        kwargs.setdefault("gamma1", 0.0)
        kwargs.setdefault("gamma2", 0.0)
        return cls(**kwargs)


@dataclass
class TaskEnsemble:
    """Generated hidden vectors, features and labels for one trial.

    ``features_full`` holds the raw ``n_t x p`` Gaussian matrices used for
    label generation; the learner-visible ``features`` are views of their
    first ``k`` columns (no copy).
    """

    shared_vector: np.ndarray            # (p,), unit norm
    task_vectors: np.ndarray             # (T, p), unit norm rows
    hidden_vectors: np.ndarray           # (T, p), xi_t = sigma v_t + v_0
    subset: np.ndarray                   # (k,) observed feature indices
    features_full: list = field(repr=False, default_factory=list)  # T x (n_t, p)
    labels: list = field(repr=False, default_factory=list)         # T x (n_t,)

    @property
    def num_tasks(self) -> int:
        return self.hidden_vectors.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.hidden_vectors.shape[1]

    @property
    def known_dim(self) -> int:
        return self.subset.size

    @property
    def features(self) -> list:
        """Learner-visible design matrices: views of the first k columns."""
        k = self.known_dim
        return [a[:, :k] for a in self.features_full]

    def hidden_restricted(self, task: int, normalized: bool = False) -> np.ndarray:
        """xi_t restricted to the observed subset, optionally unit-normalized.

        Restriction happens first, normalization second.
        """
        v = self.hidden_vectors[task, : self.known_dim]
        if normalized:
            nrm = np.linalg.norm(v)
            if nrm == 0.0:
                raise ValueError("restricted hidden vector has zero norm")
            return v / nrm
        return v


def unit_sphere_vector(dim: int, rng: Generator) -> np.ndarray:
    """Uniform draw from the unit sphere in R^dim (Gaussian, normalized)."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    v = rng.standard_normal(dim)
    nrm = np.linalg.norm(v)
    while nrm == 0.0:  # probability zero, kept for completeness
        v = rng.standard_normal(dim)
        nrm = np.linalg.norm(v)
    return v / nrm


def _apply_channel(z: np.ndarray, model_kind: str) -> np.ndarray:
    if model_kind == "linear_regression":
        return z
    if model_kind == "binary_classification":
        return np.where(z >= 0.0, 1.0, -1.0)
    raise ValueError(f"unknown model_kind {model_kind!r}")


def generate_ensemble(config: ExperimentConfig, seed: int | None = None) -> TaskEnsemble:
    """Draw a full task ensemble as a pure function of ``(config, seed)``.

    Labels are computed from the full p-dimensional feature rows against
    ``xi_t``; the observed subset is the first ``k`` coordinates (the feature
    distribution is rotation invariant, so a fixed subset is distributionally
    equivalent to a uniformly random one and keeps slicing trivial).
    """
    if seed is None:
        seed = config.seed
    if config.rho == 0.0:
        raise ValueError(
            "rho = 0 makes sigma infinite; finite ensembles require rho > 0 "
            "(the deterministic predictions still cover rho = 0 for classification)"
        )
    p = config.ambient_dim
    k = config.known_dim
    T = config.num_tasks
    sigma = config.sigma

    v0 = unit_sphere_vector(p, rng_stream(seed, "shared_vector"))
    task_vectors = np.empty((T, p))
    for t in range(T):
        task_vectors[t] = unit_sphere_vector(p, rng_stream(seed, "task_vector", t))
    hidden = sigma * task_vectors + v0

    features_full = []
    labels = []
    for t, n_t in enumerate(config.samples_per_task):
        a = rng_stream(seed, "features", t).standard_normal((n_t, p))
        features_full.append(a)
        labels.append(_apply_channel(a @ hidden[t], config.model_kind))

    return TaskEnsemble(
        shared_vector=v0,
        task_vectors=task_vectors,
        hidden_vectors=hidden,
        subset=np.arange(k),
        features_full=features_full,
        labels=labels,
    )
