"""Linear per-loop cache-miss models with a non-determinism upper bound.

A model maps resolved loop bounds (lb1..lbn) to predicted misses through
the prefix-product feature vector (1, lb1, lb1*lb2, ..., lb1*...*lbn).
Fitting is ordinary least squares solved by normal equations with column
scaling and partial pivoting; a global ratio ``k`` (max std/mean over
repeat runs of every loop) widens predictions into the upper bound
CM(U) = (1+k)*CM that monitoring compares against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import DegenerateFitError, SchemaError, UndefinedRatioError

PRECISE = "precise"
EXPECTED = "expected"

_PIVOT_TOL = 1e-10


def term_names(depth: int) -> list[str]:
    names = ["1"]
    for i in range(1, depth + 1):
        names.append("*".join(f"lb{j}" for j in range(1, i + 1)))
    return names


def features(bounds) -> np.ndarray:
    """Prefix-product feature vector, constant term first."""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 1 or bounds.size < 1:
        raise ValueError("need at least one loop bound")
    return np.concatenate(([1.0], np.cumprod(bounds)))


@dataclass(frozen=True)
class TrainingSample:
    loop_id: str
    bounds: tuple[int, ...]
    observed_misses: float


def fit(samples: list[TrainingSample]) -> np.ndarray:
    """Least-squares coefficients for the prefix-product model.

    Solves the normal equations after scaling feature columns to unit
    norm, using Gaussian elimination with partial pivoting. A pivot below
    1e-10 (in scaled units) means the design matrix is rank deficient and
    raises DegenerateFitError naming the collinear term.
    """
    if not samples:
        raise ValueError("no training samples")
    depth = len(samples[0].bounds)
    if any(len(s.bounds) != depth for s in samples):
        raise ValueError("inconsistent bound tuple lengths across samples")
    if len(samples) < depth + 2:
        raise ValueError(f"need at least depth+2 = {depth + 2} samples, got {len(samples)}")
    X = np.array([features(s.bounds) for s in samples], dtype=float)
    y = np.array([s.observed_misses for s in samples], dtype=float)
    names = term_names(depth)

    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0.0] = 1.0
    Xs = X / scale
    G = Xs.T @ Xs
    b = Xs.T @ y
    coeffs_scaled = _solve_pivoted(G, b, names)
    return coeffs_scaled / scale


def _solve_pivoted(G: np.ndarray, b: np.ndarray, names: list[str]) -> np.ndarray:
    n = len(b)
    A = np.hstack([G.astype(float), b.reshape(-1, 1).astype(float)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[pivot_row, col]) < _PIVOT_TOL:
            raise DegenerateFitError(
                f"design matrix is rank deficient at term {names[col]!r}; "
                "drop the term or diversify the training bounds",
                collinear_terms=(names[col],),
            )
        if pivot_row != col:
            A[[col, pivot_row]] = A[[pivot_row, col]]
        A[col + 1:] -= np.outer(A[col + 1:, col] / A[col, col], A[col])
    coeffs = np.zeros(n)
    for row in range(n - 1, -1, -1):
        coeffs[row] = (A[row, -1] - A[row, row + 1:n] @ coeffs[row + 1:n]) / A[row, row]
    return coeffs


def compute_k(per_loop_runs: dict[str, list[float]]) -> float:
    """Max over loops of population std / mean of repeated-run misses."""
    if not per_loop_runs:
        raise ValueError("no repeat runs supplied")
    worst = 0.0
    for loop_id in sorted(per_loop_runs):
        runs = np.asarray(per_loop_runs[loop_id], dtype=float)
        if runs.size < 2:
            raise ValueError(f"loop {loop_id}: need at least 2 repeat runs")
        mean = float(runs.mean())
        if mean <= 0.0:
            raise UndefinedRatioError(f"loop {loop_id}: zero mean misses, ratio undefined")
        worst = max(worst, float(runs.std()) / mean)
    return worst


@dataclass
class MissModel:
    loop_id: str
    coeffs: tuple[float, ...]
    k: float
    kind: str = PRECISE
    expected_bounds: tuple[float, ...] | None = None

    def __post_init__(self):
        self.coeffs = tuple(float(c) for c in self.coeffs)
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.kind not in (PRECISE, EXPECTED):
            raise ValueError(f"unknown beacon kind {self.kind!r}")
        if self.expected_bounds is not None:
            self.expected_bounds = tuple(float(v) for v in self.expected_bounds)

    @property
    def depth(self) -> int:
        return len(self.coeffs) - 1


def _effective_bounds(model: MissModel, bounds) -> np.ndarray:
    if bounds is None:
        bounds = [None] * model.depth
    bounds = list(bounds)
    if len(bounds) != model.depth:
        raise ValueError(
            f"model {model.loop_id}: got {len(bounds)} bounds for depth {model.depth}")
    out = []
    for i, v in enumerate(bounds):
        if v is None:
            if model.expected_bounds is None:
                raise ValueError(
                    f"model {model.loop_id}: missing bound {i} and no expected bounds")
            out.append(model.expected_bounds[i])
        else:
            out.append(float(v))
    return np.asarray(out)


def predict(model: MissModel, bounds=None) -> float:
    """Predicted misses CM for the given bounds, floored at zero.

    Entries of ``bounds`` that are None (or the whole argument, for
    expected-kind models) are substituted from the training means.
    """
    eff = _effective_bounds(model, bounds)
    return max(0.0, float(features(eff) @ np.asarray(model.coeffs)))


def predict_upper(model: MissModel, bounds=None) -> float:
    """Upper bound CM(U) = (1 + k) * CM; no lower bound is produced."""
    return (1.0 + model.k) * predict(model, bounds)


# --------------------------------------------------------------------------
# Model-set serialization


@dataclass
class ModelSet:
    """All fitted models of one trained program set plus the shared k."""

    k: float
    models: dict[str, MissModel] = field(default_factory=dict)

    def add(self, model: MissModel):
        self.models[model.loop_id] = model

    def get(self, loop_id: str) -> MissModel | None:
        return self.models.get(loop_id)


MODEL_SCHEMA_VERSION = 1


def dump_model_set(ms: ModelSet, path) -> None:
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "k": float(ms.k),
        "models": [
            {
                "loop_id": m.loop_id,
                "kind": m.kind,
                "coeffs": [float(c) for c in m.coeffs],
                "expected_bounds": (None if m.expected_bounds is None
                                    else [float(v) for v in m.expected_bounds]),
            }
            for _, m in sorted(ms.models.items())
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True, default_flow_style=False)


def load_model_set(path) -> ModelSet:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != MODEL_SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported model file version")
    ms = ModelSet(k=float(doc["k"]))
    for raw in doc.get("models", []):
        ms.add(MissModel(
            loop_id=raw["loop_id"],
            coeffs=tuple(raw["coeffs"]),
            k=ms.k,
            kind=raw.get("kind", PRECISE),
            expected_bounds=(tuple(raw["expected_bounds"])
                             if raw.get("expected_bounds") else None),
        ))
    return ms
