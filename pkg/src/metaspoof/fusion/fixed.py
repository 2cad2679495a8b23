"""Untrained fusion rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..types import ValidationError

FIXED_KINDS = ("sum", "product", "minimum")


def fuse_fixed(kind: str, s) -> float:
    return float(FixedRule(kind).score(np.asarray(s, dtype=np.float64).reshape(1, -1))[0])


@dataclass(frozen=True)
class FixedRule:
    kind: str

    def __post_init__(self):
        if self.kind not in FIXED_KINDS:
            raise ValidationError(f"unknown fixed rule {self.kind!r}; expected one of {FIXED_KINDS}")

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "sum":
            return X.sum(axis=1)
        if self.kind == "product":
            return X.prod(axis=1)
        return X.min(axis=1)

    def to_json(self) -> dict:
        return {"rule": self.kind}
