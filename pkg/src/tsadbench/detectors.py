"""Anomaly score models: residual-subspace projection, mean baseline, external.

The projection detector fits the covariance eigenstructure of the
standardized training half and scores a test observation by its squared
projection onto either the residual subspace (components after the retained
top-k, the default) or the major subspace (the top-k themselves, the literal
summation variant). Both detectors emit HIGHER_ANOMALOUS scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from .core import MachineDataset, Orientation, ScoreSeries, ValidationError
from .preprocess import ZScoreStats, zscore_apply, zscore_fit

# Relative magnitude below which eigenvalues count as numerical noise from
# near-singular covariance (constant channels) and are clamped to zero.
EIGENVALUE_CLAMP = 1e-12

DEFAULT_CEV_TAU = 0.5


class ScoreMode(Enum):
    RESIDUAL = "residual"
    MAJOR = "major"


def covariance(standardized_train) -> np.ndarray:
    """Second-moment matrix (1/N) sum x_t x_t^T of already-centered rows."""
    arr = np.asarray(standardized_train, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValidationError("covariance needs a non-empty 2-D matrix")
    sigma = arr.T @ arr / arr.shape[0]
    return (sigma + sigma.T) / 2.0


def eigendecompose(sigma) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors (columns) and eigenvalues in descending order.

    The sign of each eigenvector is fixed so its first component of
    non-negligible magnitude is positive, making the decomposition
    reproducible across platforms.
    """
    mat = np.asarray(sigma, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError("eigendecompose needs a square matrix")
    if np.abs(mat - mat.T).max() > 1e-10:
        raise ValidationError("matrix is not symmetric within 1e-10")
    eigvals, eigvecs = np.linalg.eigh(mat)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    scale = max(np.abs(eigvals[0]), 1.0)
    for i in range(eigvecs.shape[1]):
        col = eigvecs[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            eigvecs[:, i] = -col
    eigvals = np.where(np.abs(eigvals) <= EIGENVALUE_CLAMP * scale, 0.0, eigvals)
    return eigvecs, eigvals


def select_k(eigvals, tau: float) -> int:
    """Smallest k whose cumulative explained variance reaches tau."""
    lam = np.asarray(eigvals, dtype=float)
    if np.any(np.diff(lam) > 1e-12 * max(1.0, float(np.abs(lam).max(initial=0.0)))):
        raise ValidationError("eigenvalues must be non-increasing")
    total = lam.sum()
    if total <= 0.0:
        raise ValidationError("all-zero spectrum: cannot select components")
    if not 0.0 < tau <= 1.0:
        raise ValidationError(f"tau must be in (0, 1], got {tau}")
    cev = np.cumsum(lam) / total
    reached = np.flatnonzero(cev >= tau)
    # cev[-1] can fall a few ulp short of 1.0; the full set always qualifies
    return int(reached[0]) + 1 if reached.size else lam.size


@dataclass(frozen=True)
class PcaModel:
    """Fitted eigenstructure plus the standardization used at fit time."""

    eigenvectors: np.ndarray  # M x M, columns ordered by descending eigenvalue
    eigenvalues: np.ndarray
    k: int
    tau: float
    stats: ZScoreStats | None = None

    def __post_init__(self) -> None:
        vecs = np.array(self.eigenvectors, dtype=float)
        vals = np.array(self.eigenvalues, dtype=float)
        m = vecs.shape[0]
        if vecs.shape != (m, m) or vals.shape != (m,):
            raise ValidationError("inconsistent eigenstructure shapes")
        if not 1 <= self.k <= m:
            raise ValidationError(f"k={self.k} outside 1..{m}")
        if np.abs(vecs.T @ vecs - np.eye(m)).max() > 1e-8:
            raise ValidationError("eigenvector columns are not orthonormal")
        scale = max(1.0, float(np.abs(vals).max()))
        if np.any(np.diff(vals) > 1e-12 * scale) or np.any(vals < -1e-12 * scale):
            raise ValidationError("eigenvalues must be non-increasing and >= 0")
        vecs.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n_channels(self) -> int:
        return self.eigenvectors.shape[0]


def fit_pca(standardized_train, tau: float = DEFAULT_CEV_TAU,
            stats: ZScoreStats | None = None) -> PcaModel:
    sigma = covariance(standardized_train)
    eigvecs, eigvals = eigendecompose(sigma)
    k = select_k(eigvals, tau)
    return PcaModel(eigvecs, eigvals, k, tau, stats)


def pca_score(model: PcaModel, standardized_obs,
              mode: ScoreMode = ScoreMode.RESIDUAL) -> float:
    """Squared projection of one standardized observation.

    RESIDUAL sums components k+1..M (distance from the principal subspace);
    MAJOR sums components 1..k. The two always add up to ||x||^2.
    """
    x = np.asarray(standardized_obs, dtype=float).ravel()
    if x.size != model.n_channels:
        raise ValidationError(
            f"observation has {x.size} channels, model expects {model.n_channels}"
        )
    proj = model.eigenvectors.T @ x
    if mode is ScoreMode.RESIDUAL:
        return float(np.sum(proj[model.k:] ** 2))
    return float(np.sum(proj[: model.k] ** 2))


def pca_score_matrix(model: PcaModel, standardized_rows,
                     mode: ScoreMode = ScoreMode.RESIDUAL) -> np.ndarray:
    arr = np.asarray(standardized_rows, dtype=float)
    if arr.shape[1] != model.n_channels:
        raise ValidationError(
            f"matrix has {arr.shape[1]} channels, model expects {model.n_channels}"
        )
    proj = arr @ model.eigenvectors
    if mode is ScoreMode.RESIDUAL:
        return np.sum(proj[:, model.k:] ** 2, axis=1)
    return np.sum(proj[:, : model.k] ** 2, axis=1)


def mean_score(standardized_obs) -> float:
    """Absolute arithmetic mean of the standardized channels."""
    x = np.asarray(standardized_obs, dtype=float).ravel()
    return float(abs(x.mean()))


class Detector(Protocol):
    """Fit on the training half only, then score any matrix of observations."""

    name: str

    def fit(self, train: np.ndarray) -> None: ...

    def score_matrix(self, matrix: np.ndarray) -> np.ndarray: ...


class PcaDetector:
    """Residual/major-subspace projection detector on z-scored data."""

    def __init__(self, tau: float = DEFAULT_CEV_TAU,
                 mode: ScoreMode = ScoreMode.RESIDUAL) -> None:
        self.tau = tau
        self.mode = mode
        self.model: PcaModel | None = None
        self.name = "pca"

    def fit(self, train) -> None:
        stats = zscore_fit(train)
        self.model = fit_pca(zscore_apply(train, stats), self.tau, stats)

    def score_matrix(self, matrix) -> np.ndarray:
        if self.model is None or self.model.stats is None:
            raise ValidationError("detector is not fitted")
        return pca_score_matrix(
            self.model, zscore_apply(matrix, self.model.stats), self.mode
        )


class MeanDetector:
    """Uninformative baseline: |channel mean| of the z-scored observation."""

    def __init__(self) -> None:
        self.stats: ZScoreStats | None = None
        self.name = "mean"

    def fit(self, train) -> None:
        self.stats = zscore_fit(train)

    def score_matrix(self, matrix) -> np.ndarray:
        if self.stats is None:
            raise ValidationError("detector is not fitted")
        return np.abs(zscore_apply(matrix, self.stats).mean(axis=1))


def score_series(detector: Detector, dataset: MachineDataset) -> ScoreSeries:
    """Fit on the training half, score every test observation."""
    detector.fit(dataset.train)
    return ScoreSeries(
        detector.score_matrix(dataset.test), Orientation.HIGHER_ANOMALOUS
    )


def train_score_series(detector: Detector, dataset: MachineDataset) -> ScoreSeries:
    """Score the training half with an already-fitted detector (POT input)."""
    return ScoreSeries(
        detector.score_matrix(dataset.train), Orientation.HIGHER_ANOMALOUS
    )


def model_to_text(model: PcaModel) -> str:
    """Flat text serialization: M, k, tau, eigenvalues, eigenvectors row-major.

    Values carry 17 significant digits so the round-trip is bit-exact.
    """
    lines = [
        str(model.n_channels),
        str(model.k),
        format(model.tau, ".17g"),
        " ".join(format(v, ".17g") for v in model.eigenvalues),
    ]
    for row in model.eigenvectors:
        lines.append(" ".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> PcaModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        m = int(lines[0])
        k = int(lines[1])
        tau = float(lines[2])
        eigvals = np.array([float(v) for v in lines[3].split()])
        eigvecs = np.array(
            [[float(v) for v in lines[4 + i].split()] for i in range(m)]
        )
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"malformed model text: {exc}") from exc
    return PcaModel(eigvecs, eigvals, k, tau)
