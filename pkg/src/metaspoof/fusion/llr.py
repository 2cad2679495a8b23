"""Likelihood-ratio fusion with per-matcher Gamma densities, and its secure variants.

Fused scores are log likelihood ratios. The secure variants model the
impostor class as a mixture over attack combinations whose attacked
components use a fake-score density chosen by the variant:
``extended`` reuses the genuine density, ``uniform`` is flat on [0, 1], and
``alpha`` is fitted to fakes simulated from the meta-model.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import gaussian_kde

from ..beta import AttackScenario
from ..simulate import sample_fake_scores
from ..types import (MixturePrior, ScoreDataset, ValidationError, enumerate_combinations,
                     validate_dataset, validate_prior)

GAMMA_OFFSET = 1e-6
DENSITY_FLOOR = 1e-300
LOG_FLOOR = math.log(DENSITY_FLOOR)
ALPHA_SIM_SIZE = 100_000
KDE_MAX_POINTS = 5_000

SECURE_VARIANTS = ("extended", "uniform", "alpha")


@dataclass(frozen=True)
class GammaFit:
    k: float
    theta: float
    offset: float = GAMMA_OFFSET

    def __post_init__(self):
        if not (self.k > 0 and self.theta > 0):
            raise ValidationError(f"Gamma parameters must be positive, got k={self.k}, theta={self.theta}")

    def logpdf(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=np.float64) + self.offset
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = ((self.k - 1.0) * np.log(y) - y / self.theta
                  - gammaln(self.k) - self.k * math.log(self.theta))
        lp = np.where(y > 0, lp, LOG_FLOOR)
        return np.maximum(np.nan_to_num(lp, nan=LOG_FLOOR), LOG_FLOOR)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def to_json(self) -> dict:
        return {"k": self.k, "theta": self.theta, "offset": self.offset}

    @classmethod
    def from_json(cls, obj) -> "GammaFit":
        return cls(float(obj["k"]), float(obj["theta"]), float(obj.get("offset", GAMMA_OFFSET)))


def fit_gamma(scores: Sequence[float], offset: float = GAMMA_OFFSET) -> GammaFit:
    """Method-of-moments Gamma fit on ``scores + offset``."""
    y = np.asarray(scores, dtype=np.float64).ravel() + offset
    if y.size < 2:
        raise ValidationError("Gamma fit needs at least 2 values")
    mean, var = float(y.mean()), float(y.var(ddof=1))
    if not var > 0:
        raise ValidationError("Gamma fit needs a positive sample variance")
    if not mean > 0:
        raise ValidationError("Gamma fit needs a positive shifted mean")
    return GammaFit(mean * mean / var, var / mean, offset)


@dataclass(frozen=True)
class LlrModel:
    genuine: tuple[GammaFit, ...]
    impostor: tuple[GammaFit, ...]

    def __post_init__(self):
        if len(self.genuine) != len(self.impostor):
            raise ValidationError("LLR model needs one genuine and one impostor fit per matcher")

    @property
    def n_matchers(self) -> int:
        return len(self.genuine)

    def log_genuine(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return sum(self.genuine[i].logpdf(X[:, i]) for i in range(self.n_matchers))

    def log_impostor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return sum(self.impostor[i].logpdf(X[:, i]) for i in range(self.n_matchers))

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.log_genuine(X) - self.log_impostor(X)

    def to_json(self) -> dict:
        return {"rule": "llr", "genuine": [g.to_json() for g in self.genuine],
                "impostor": [h.to_json() for h in self.impostor]}

    @classmethod
    def from_json(cls, obj) -> "LlrModel":
        return cls(tuple(GammaFit.from_json(g) for g in obj["genuine"]),
                   tuple(GammaFit.from_json(h) for h in obj["impostor"]))


def train_llr(dataset: ScoreDataset) -> LlrModel:
    validate_dataset(dataset)
    k = dataset.n_matchers
    return LlrModel(tuple(fit_gamma(dataset.genuine_scores(i)) for i in range(k)),
                    tuple(fit_gamma(dataset.impostor_scores(i)) for i in range(k)))


def fuse_llr(model: LlrModel, s) -> float:
    return float(model.score(np.asarray(s, dtype=np.float64).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Attack priors of the extended LLR


def extended_llr_prior(r: float, c: Sequence[float]) -> MixturePrior:
    """Prior over ``{0,1}^K`` obtained from an attempt rate ``r`` and per-matcher failure rates ``c``.

    An impostor attempts no attack with probability ``1 - r`` and each non-empty
    subset of matchers with probability ``r / (2^K - 1)``; an attempted attack
    on matcher ``i`` fails with probability ``c[i]``. For two matchers the
    closed forms are used directly.
    """
    c = [float(v) for v in c]
    if not (0.0 <= r <= 1.0):
        raise ValidationError(f"r must lie in [0, 1], got {r}")
    if not c or any(not (0.0 <= v <= 1.0) for v in c):
        raise ValidationError(f"every c_i must lie in [0, 1], got {c}")
    k = len(c)
    if k == 2:
        c1, c2 = c
        return MixturePrior({
            (0, 0): r / 3.0 * (c1 + c2 + c1 * c2) + 1.0 - r,
            (0, 1): r / 3.0 * (1.0 + c1) * (1.0 - c2),
            (1, 0): r / 3.0 * (1.0 - c1) * (1.0 + c2),
            (1, 1): r / 3.0 * (1.0 - c1) * (1.0 - c2),
        })
    return _extended_prior_generative(r, c)


def _extended_prior_generative(r: float, c: Sequence[float]) -> MixturePrior:
    k = len(c)
    weights = {a: 0.0 for a in enumerate_combinations((1,) * k)}
    per_attempt = r / (2 ** k - 1)
    for t in itertools.product((0, 1), repeat=k):
        pt = (1.0 - r) if not any(t) else per_attempt
        if pt == 0:
            continue
        for a in itertools.product((0, 1), repeat=k):
            p = pt
            for ti, ai, ci in zip(t, a, c):
                if ti == 0:
                    p *= 1.0 if ai == 0 else 0.0
                else:
                    p *= ci if ai == 0 else 1.0 - ci
            weights[a] += p
    return MixturePrior(weights)


# ---------------------------------------------------------------------------
# Fake-score densities


@dataclass(frozen=True)
class FakeDensity:
    """Density of attacked scores for one (matcher, attack level).

    ``kind`` is ``"genuine"`` (same as the genuine fit), ``"uniform"`` (1 on
    [0, 1]), ``"gamma"`` or ``"kde"`` (fitted to simulated fakes).
    """

    kind: str
    gamma: GammaFit | None = None
    points: np.ndarray | None = None
    bandwidth: float | None = None
    _kde: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("genuine", "uniform", "gamma", "kde"):
            raise ValidationError(f"unknown fake density kind {self.kind!r}")
        if self.kind in ("genuine", "gamma") and self.gamma is None:
            raise ValidationError(f"{self.kind} fake density needs a Gamma fit")
        if self.kind == "kde":
            pts = np.asarray(self.points, dtype=np.float64).ravel()
            object.__setattr__(self, "points", pts)
            kde = gaussian_kde(pts, bw_method=self.bandwidth)
            object.__setattr__(self, "bandwidth", float(kde.factor))
            object.__setattr__(self, "_kde", kde)

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind in ("genuine", "gamma"):
            return self.gamma.logpdf(x)
        if self.kind == "uniform":
            return np.where((x >= 0.0) & (x <= 1.0), 0.0, LOG_FLOOR)
        with np.errstate(divide="ignore"):
            return np.maximum(self._kde.logpdf(x), LOG_FLOOR)

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.gamma is not None:
            out["gamma"] = self.gamma.to_json()
        if self.kind == "kde":
            out["points"] = self.points.tolist()
            out["bandwidth"] = self.bandwidth
        return out

    @classmethod
    def from_json(cls, obj) -> "FakeDensity":
        return cls(obj["kind"],
                   GammaFit.from_json(obj["gamma"]) if "gamma" in obj else None,
                   np.asarray(obj["points"]) if "points" in obj else None,
                   obj.get("bandwidth"))


@dataclass(frozen=True)
class SecureLlrModel:
    base: LlrModel
    prior: MixturePrior
    variant: str
    fake: Mapping[tuple[int, int], FakeDensity]

    def __post_init__(self):
        needed = _needed_pairs(self.prior)
        missing = sorted(needed - set(self.fake))
        if missing:
            raise ValidationError(f"no fake density for (matcher, level) pair(s) {missing}")

    def log_impostor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        k = self.base.n_matchers
        zero = [self.base.impostor[i].logpdf(X[:, i]) for i in range(k)]
        cache: dict[tuple[int, int], np.ndarray] = {}
        terms = []
        for combo, w in self.prior.nonzero().items():
            t = math.log(w)
            comp = 0.0
            for i, a in enumerate(combo):
                if a == 0:
                    comp = comp + zero[i]
                else:
                    if (i, a) not in cache:
                        cache[(i, a)] = self.fake[(i, a)].logpdf(X[:, i])
                    comp = comp + cache[(i, a)]
            terms.append(t + comp)
        return _logsumexp(np.vstack(terms))

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.base.log_genuine(X) - self.log_impostor(X)

    def to_json(self) -> dict:
        return {
            "rule": f"{self.variant}_llr",
            "variant": self.variant,
            "base": self.base.to_json(),
            "prior": self.prior.to_json(),
            "fake": {f"{i}:{a}": d.to_json() for (i, a), d in sorted(self.fake.items())},
        }

    @classmethod
    def from_json(cls, obj) -> "SecureLlrModel":
        fake = {}
        for key, d in obj["fake"].items():
            i, a = key.split(":")
            fake[(int(i), int(a))] = FakeDensity.from_json(d)
        return cls(LlrModel.from_json(obj["base"]), MixturePrior.from_json(obj["prior"]),
                   obj["variant"], fake)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    if a.shape[0] == 1:
        return a[0]
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m).sum(axis=0))


def _needed_pairs(prior: MixturePrior) -> set[tuple[int, int]]:
    return {(i, a) for c, w in prior.weights.items() if w > 0 for i, a in enumerate(c) if a}


def train_secure_llr(dataset: ScoreDataset, prior: MixturePrior, variant: str,
                     scenarios: Mapping[tuple[int, int], AttackScenario] | None = None,
                     seed: int = 0, n_sim: int = ALPHA_SIM_SIZE,
                     fake_density: str = "gamma") -> SecureLlrModel:
    """Fit the base LLR, then attach fake densities for every attacked (matcher, level).

    ``scenarios`` (keyed by ``(matcher, level)``) is required by the ``alpha``
    variant and ignored by the others. ``fake_density`` selects the family
    fitted to simulated fakes for ``alpha``: ``"gamma"`` or ``"kde"``.
    """
    if variant not in SECURE_VARIANTS:
        raise ValidationError(f"unknown secure LLR variant {variant!r}; expected one of {SECURE_VARIANTS}")
    base = train_llr(dataset)
    k = dataset.n_matchers
    if prior.n_matchers != k:
        raise ValidationError(f"prior covers {prior.n_matchers} matchers, dataset has {k}")
    validate_prior(prior, enumerate_combinations(prior.u()))
    fake: dict[tuple[int, int], FakeDensity] = {}
    needed = sorted(_needed_pairs(prior))
    if variant == "alpha":
        if scenarios is None:
            raise ValidationError("alpha variant needs attack scenarios")
        missing = [p for p in needed if p not in scenarios]
        if missing:
            raise ValidationError(f"alpha variant: no scenario for (matcher, level) pair(s) {missing}")
    for (i, a) in needed:
        if variant == "extended":
            fake[(i, a)] = FakeDensity("genuine", base.genuine[i])
        elif variant == "uniform":
            fake[(i, a)] = FakeDensity("uniform")
        else:
            sims = sample_fake_scores(dataset.genuine_scores(i), dataset.impostor_scores(i),
                                      scenarios[(i, a)].meta, n_sim, (seed, "alpha-llr", i, a))
            if fake_density == "gamma":
                fake[(i, a)] = FakeDensity("gamma", fit_gamma(sims))
            elif fake_density == "kde":
                fake[(i, a)] = FakeDensity("kde", points=sims[:KDE_MAX_POINTS])
            else:
                raise ValidationError(f"unknown fake density family {fake_density!r}")
    return SecureLlrModel(base, prior, variant, fake)


def fuse_secure_llr(model: SecureLlrModel, s) -> float:
    return float(model.score(np.asarray(s, dtype=np.float64).reshape(1, -1))[0])
