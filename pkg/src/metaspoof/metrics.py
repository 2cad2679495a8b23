"""Operating-point error rates, DET curves, GFAR and confidence bands.

A claim is accepted when its fused score is ``>= t`` and rejected when it is
``< t``; ties at the threshold count as acceptances.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .types import AttackCombination, MixturePrior, ValidationError, combo_key

DEFAULT_FRR_MAX = 0.02


def _as_scores(x, what: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValidationError(f"{what} scores are empty")
    return a


def error_rates_at(fused_genuine, fused_other, t: float) -> tuple[float, float]:
    """Return ``(FRR, acceptance rate of fused_other)`` at threshold ``t``.

    The second value is the FAR when ``fused_other`` holds zero-effort
    impostors and the SFAR when it holds spoofed impostors.
    """
    g = _as_scores(fused_genuine, "genuine")
    x = _as_scores(fused_other, "impostor")
    return float(np.count_nonzero(g < t)) / g.size, float(np.count_nonzero(x >= t)) / x.size


def threshold_for_frr(fused_genuine, frr_max: float = DEFAULT_FRR_MAX) -> float:
    """Largest threshold among the genuine scores (and -inf) whose FRR is at most ``frr_max``."""
    if not (0.0 <= frr_max < 1.0):
        raise ValidationError(f"frr_max must lie in [0, 1), got {frr_max}")
    g = np.sort(_as_scores(fused_genuine, "genuine"))
    n_below = np.searchsorted(g, g, side="left")
    ok = n_below / g.size <= frr_max
    if not ok.any():
        return -math.inf
    return float(g[ok].max())


@dataclass(frozen=True)
class DetCurve:
    """Threshold sweep; ``frr`` rises and ``far`` falls as the threshold grows."""

    thresholds: np.ndarray
    frr: np.ndarray
    far: np.ndarray
    tag: Mapping | None = None

    def __post_init__(self):
        for name in ("thresholds", "frr", "far"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.frr.size

    @property
    def impact(self) -> float | None:
        return None if self.tag is None else self.tag.get("impact")

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.frr) >= 0) and np.all(np.diff(self.far) <= 0))

    def far_at(self, frr_query) -> np.ndarray:
        """Linearly interpolated FAR at each query FRR, following the DET staircase.

        At an FRR the curve attains exactly, the lowest FAR reached there is used.
        """
        q = np.atleast_1d(np.asarray(frr_query, dtype=np.float64))
        x, y = self.frr, self.far
        idx = np.searchsorted(x, q, side="right") - 1
        idx = np.clip(idx, 0, x.size - 1)
        out = y[idx].copy()
        nxt = np.minimum(idx + 1, x.size - 1)
        between = (x[idx] < q) & (nxt > idx)
        if between.any():
            x0, x1 = x[idx[between]], x[nxt[between]]
            y0, y1 = y[idx[between]], y[nxt[between]]
            w = (q[between] - x0) / (x1 - x0)
            out[between] = y0 + w * (y1 - y0)
        return out

    def to_json(self) -> dict:
        return {
            "threshold": [_json_float(v) for v in self.thresholds],
            "frr": self.frr.tolist(),
            "far": self.far.tolist(),
            "tag": None if self.tag is None else dict(self.tag),
        }


def _json_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def det_curve(fused_genuine, fused_other, tag: Mapping | None = None) -> DetCurve:
    """One DET point per distinct candidate threshold, with +-inf sentinels."""
    g = np.sort(_as_scores(fused_genuine, "genuine"))
    x = np.sort(_as_scores(fused_other, "impostor"))
    t = np.concatenate(([-np.inf], np.unique(np.concatenate((g, x))), [np.inf]))
    frr = np.searchsorted(g, t, side="left") / g.size
    far = (x.size - np.searchsorted(x, t, side="left")) / x.size
    return DetCurve(t, frr, far, tag)


def gfar(far: float, sfar_by_combo: Mapping[AttackCombination, float],
         prior: MixturePrior) -> float:
    """Prior-weighted convex combination of FAR and the per-combination SFARs."""
    zero = (0,) * prior.n_matchers
    total = prior.zero_effort * far
    sfar = {tuple(k): v for k, v in sfar_by_combo.items()}
    for combo, w in sorted(prior.weights.items()):
        if combo == zero or w == 0:
            continue
        if combo not in sfar:
            raise ValidationError(f"no SFAR for combination {combo_key(combo)} (prior {w})")
        total += w * sfar[combo]
    return float(total)


def default_frr_grid(n: int = 200, low: float = 1e-3, high: float = 0.5,
                     operating: float = DEFAULT_FRR_MAX) -> np.ndarray:
    return np.unique(np.concatenate((np.geomspace(low, high, n), [operating])))


def average_det(curves: Sequence[DetCurve], frr_grid=None) -> DetCurve:
    """Vertical averaging: mean interpolated FAR at each grid FRR."""
    if not curves:
        raise ValidationError("average_det needs at least one curve")
    grid = default_frr_grid() if frr_grid is None else np.asarray(frr_grid, dtype=np.float64)
    far = np.mean([c.far_at(grid) for c in curves], axis=0)
    return DetCurve(np.full(grid.size, np.nan), grid, far)


@dataclass(frozen=True)
class ConfidenceBand:
    frr: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    bucket_means: dict[float, np.ndarray] = field(default_factory=dict)
    bucket_counts: dict[float, int] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.frr.size == 0 or not self.bucket_means

    def contains(self, curve: DetCurve, atol: float = 0.0) -> np.ndarray:
        """Pointwise containment mask of ``curve`` on the band's FRR grid."""
        f = curve.far_at(self.frr)
        return (f >= self.lower - atol) & (f <= self.upper + atol)

    def to_json(self) -> dict:
        return {
            "frr": self.frr.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "buckets": [
                {"impact": b, "count": self.bucket_counts[b], "far": m.tolist()}
                for b, m in sorted(self.bucket_means.items())
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frr", "far", "lower", "upper", "bucket"])
        for b, m in sorted(self.bucket_means.items()):
            for f, v, lo, hi in zip(self.frr, m, self.lower, self.upper):
                w.writerow([repr(float(f)), repr(float(v)), repr(float(lo)), repr(float(hi)), b])
        return buf.getvalue()


IMPACT_BUCKETS = tuple(round(0.05 * i, 2) for i in range(21))


def impact_bands(tagged_curves: Sequence[DetCurve], bucket_values: Sequence[float] = IMPACT_BUCKETS,
                 frr_grid=None, envelope: str = "minmax") -> ConfidenceBand:
    """Bucket curves by nearest impact value, average per bucket, and envelope them.

    ``envelope="minmax"`` spans every input curve pointwise; ``"percentile"``
    uses the 10th and 90th percentiles of the input curves instead.
    """
    grid = default_frr_grid() if frr_grid is None else np.asarray(frr_grid, dtype=np.float64)
    if not tagged_curves:
        return ConfidenceBand(np.empty(0), np.empty(0), np.empty(0))
    buckets = np.asarray(sorted(bucket_values), dtype=np.float64)
    sampled = np.array([c.far_at(grid) for c in tagged_curves])
    members: dict[float, list[int]] = {}
    for j, c in enumerate(tagged_curves):
        imp = c.impact
        if imp is None:
            raise ValidationError(f"curve {j} carries no impact tag")
        b = float(buckets[int(np.argmin(np.abs(buckets - imp)))])
        members.setdefault(b, []).append(j)
    means = {b: sampled[idx].mean(axis=0) for b, idx in sorted(members.items())}
    counts = {b: len(idx) for b, idx in sorted(members.items())}
    if envelope == "minmax":
        lower, upper = sampled.min(axis=0), sampled.max(axis=0)
    elif envelope == "percentile":
        lower, upper = np.percentile(sampled, 10, axis=0), np.percentile(sampled, 90, axis=0)
        stacked = np.array(list(means.values()))
        lower = np.minimum(lower, stacked.min(axis=0))
        upper = np.maximum(upper, stacked.max(axis=0))
    else:
        raise ValidationError(f"unknown envelope {envelope!r}")
    return ConfidenceBand(grid, lower, upper, means, counts)
