"""Fisher linear discriminant fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..types import NumericError, ScoreDataset, ValidationError, validate_dataset

_RIDGE = 1e-8
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class LdaModel:
    w: np.ndarray
    b: float

    def score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b

    def to_json(self) -> dict:
        return {"rule": "lda", "w": self.w.tolist(), "b": self.b}

    @classmethod
    def from_json(cls, obj) -> "LdaModel":
        return cls(np.asarray(obj["w"], dtype=np.float64), float(obj["b"]))


def within_class_scatter(dataset: ScoreDataset) -> np.ndarray:
    g, i = dataset.genuine_scores(), dataset.impostor_scores()
    dg, di = g - g.mean(axis=0), i - i.mean(axis=0)
    return dg.T @ dg + di.T @ di


def train_lda(dataset: ScoreDataset) -> LdaModel:
    """Unit-norm Fisher direction, oriented so genuine scores project higher."""
    validate_dataset(dataset)
    mg = dataset.genuine_scores().mean(axis=0)
    mi = dataset.impostor_scores().mean(axis=0)
    delta = mg - mi
    if not np.any(delta):
        raise ValidationError("class means coincide; Fisher direction is undefined")
    sw = within_class_scatter(dataset)
    k = sw.shape[0]
    if np.linalg.cond(sw) > _COND_LIMIT:
        tr = np.trace(sw)
        if tr <= 0:
            raise NumericError("within-class scatter is zero")
        sw = sw + _RIDGE * tr / k * np.eye(k)
    try:
        w = np.linalg.solve(sw, delta)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular within-class scatter: {exc}") from None
    norm = np.linalg.norm(w)
    if not np.isfinite(norm) or norm == 0:
        raise NumericError("degenerate Fisher direction")
    w = w / norm
    if w @ mg < w @ mi:
        w = -w
    return LdaModel(w, float(-w @ (mg + mi) / 2.0))
