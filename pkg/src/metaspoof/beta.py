"""Beta meta-model of fake scores.

A fake score is modeled as ``alpha * genuine + (1 - alpha) * impostor`` with
``alpha`` Beta-distributed. Scenarios are parameterized by the mean and
standard deviation of ``alpha`` rather than by the usual shape pair.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betaln

from ._rng import substream
from .types import NumericError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3

_CF_MAX_ITER = 10_000
_CF_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class BetaMeanStd:
    mu: float
    sigma: float

    def __post_init__(self):
        mu, sigma = float(self.mu), float(self.sigma)
        if not (0.0 < mu < 1.0):
            raise ValidationError(f"mu must lie in (0, 1), got {mu}")
        if not (0.0 < sigma < math.sqrt(mu * (1.0 - mu))):
            raise ValidationError(
                f"sigma must lie in (0, sqrt(mu(1-mu))) = (0, {math.sqrt(mu * (1 - mu)):.6g}),"
                f" got {sigma}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class BetaShape:
    p: float
    q: float

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0 and math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValidationError(f"Beta shapes must be positive and finite, got ({self.p}, {self.q})")

    @property
    def mean(self) -> float:
        return self.p / (self.p + self.q)

    @property
    def var(self) -> float:
        s = self.p + self.q
        return self.p * self.q / (s * s * (s + 1.0))


def shape_from_mean_std(ms: BetaMeanStd) -> BetaShape:
    nu = ms.mu * (1.0 - ms.mu) / (ms.sigma * ms.sigma) - 1.0
    return BetaShape(ms.mu * nu, (1.0 - ms.mu) * nu)


def clamp_to_admissible(mu_raw: float, sigma_raw: float,
                        epsilon: float = DEFAULT_EPSILON) -> BetaMeanStd:
    """Move ``(mu, sigma)`` to the closest point of the feasible region shrunk by ``epsilon``."""
    mu = min(max(float(mu_raw), epsilon), 1.0 - epsilon)
    upper = math.sqrt(mu * (1.0 - mu)) - epsilon
    sigma = min(max(float(sigma_raw), epsilon), upper)
    return BetaMeanStd(mu, sigma)


def _log_gamma_variates(streams, a: float, n: int) -> np.ndarray:
    # G(a) = G(a + 1) * U**(1/a); in logs this never underflows for small a
    g_rng, u_rng = streams
    if a >= 1.0:
        return np.log(g_rng.standard_gamma(a, n))
    g = g_rng.standard_gamma(a + 1.0, n)
    u = u_rng.random(n)
    return np.log(g) + np.log1p(-u) / a


def sample_alpha(shape: BetaShape, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Draw ``n`` Beta variates as a ratio of two Gamma variates.

    Each component has its own child stream, so the first ``m`` draws do not
    depend on ``n``.
    """
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "alpha")
    if n == 0:
        return np.empty(0)
    children = [np.random.default_rng(int(k)) for k in rng.integers(0, 2 ** 63, size=4)]
    lx = _log_gamma_variates(children[:2], shape.p, n)
    ly = _log_gamma_variates(children[2:], shape.q, n)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(ly - lx))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    max_iter = _CF_MAX_ITER + int(20.0 * math.sqrt(max(a, b)))
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise NumericError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def _stirling_tail(z: float) -> float:
    # log Gamma(z) - [(z - 1/2) log z - z + log(2 pi) / 2], accurate for z >= 10
    z2 = 1.0 / (z * z)
    return (1.0 / 12.0 - z2 * (1.0 / 360.0 - z2 * (1.0 / 1260.0 - z2 / 1680.0))) / z


def _log1p_minus(u: float) -> float:
    """``log(1 + u) - u`` without cancellation for small ``u``."""
    if abs(u) > 0.1:
        return math.log1p(u) - u
    term, total = u, 0.0
    for k in range(2, 60):
        term *= -u
        add = term / k
        total += add
        if abs(add) <= 1e-17 * abs(total):
            break
    return total


def _log_front(a: float, b: float, x: float) -> float:
    """``log(x^a (1-x)^b / B(a, b))``."""
    if max(a, b) < 10.0:
        return -float(betaln(a, b)) + a * math.log(x) + b * math.log1p(-x)
    if min(a, b) < 10.0:
        # one small shape s, one large L: expand lgamma(L) - lgamma(s + L) by Stirling
        if a <= b:
            sm, lg, log_s, log_l = a, b, math.log(x), math.log1p(-x)
        else:
            sm, lg, log_s, log_l = b, a, math.log1p(-x), math.log(x)
        tot = sm + lg
        return (sm * log_s + lg * log_l - math.lgamma(sm) + (lg - 0.5) * math.log1p(sm / lg)
                + sm * math.log(tot) - sm - _stirling_tail(lg) + _stirling_tail(tot))
    # expand around the mean x0 so the large a log x and b log(1-x) terms cancel analytically
    x0 = a / (a + b)
    u = (x - x0) / x0
    v = (x0 - x) / (1.0 - x0)
    core = a * _log1p_minus(u) + b * _log1p_minus(v)
    corr = _stirling_tail(a) + _stirling_tail(b) - _stirling_tail(a + b)
    return core + 0.5 * math.log(a * b / (2.0 * math.pi * (a + b))) - corr


def beta_cdf(shape: BetaShape, x: float) -> float:
    """Regularized incomplete beta function ``I_x(p, q)``."""
    x = float(x)
    if not (0.0 <= x <= 1.0):
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    a, b = shape.p, shape.q
    front = math.exp(_log_front(a, b, x))
    if x < (a + 1.0) / (a + b + 2.0):
        val = front * _betacf(a, b, x) / a
    else:
        val = 1.0 - front * _betacf(b, a, 1.0 - x) / b
    return min(max(val, 0.0), 1.0)


def attack_impact(ms: BetaMeanStd) -> float:
    """Probability that the mixing weight exceeds one half."""
    return 1.0 - beta_cdf(shape_from_mean_std(ms), 0.5)


def _mean_var(x: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValidationError("each score pool needs at least 2 values")
    return float(x.mean()), float(x.var(ddof=1))


def fit_meta_parameters(genuine: Sequence[float], impostor: Sequence[float],
                        fake: Sequence[float], epsilon: float = DEFAULT_EPSILON,
                        diagnostics: dict | None = None) -> BetaMeanStd:
    """Method-of-moments estimate of ``(mu, sigma)`` from genuine/impostor/fake pools.

    Raw estimates outside the feasible region are clamped to its closest
    admissible point. A negative variance radicand is treated as
    ``sigma = epsilon``. If ``diagnostics`` is given it is filled with the
    raw estimates and which clamps fired.
    """
    mg, vg = _mean_var(genuine)
    mi, vi = _mean_var(impostor)
    mf, vf = _mean_var(fake)
    gap = mg - mi
    if abs(gap) < 1e-12:
        raise ValidationError("genuine and impostor means coincide; mixing weight is undefined")
    mu_raw = (mf - mi) / gap
    radicand = (vf - mu_raw ** 2 * vg - (1.0 - mu_raw) ** 2 * vi) / (vg + vi + gap ** 2)
    if radicand < 0 or not math.isfinite(radicand):
        log.warning("variance radicand %.3g is negative; using sigma = epsilon", radicand)
        sigma_raw = epsilon
        radicand_negative = True
    else:
        sigma_raw = math.sqrt(radicand)
        radicand_negative = False
    ms = clamp_to_admissible(mu_raw, sigma_raw, epsilon)
    if diagnostics is not None:
        diagnostics.update(
            mu_raw=mu_raw, sigma_raw=sigma_raw, radicand=radicand,
            radicand_negative=radicand_negative,
            mu_clamped=ms.mu != mu_raw, sigma_clamped=ms.sigma != sigma_raw,
        )
    return ms


@dataclass(frozen=True)
class AttackScenario:
    name: str
    meta: BetaMeanStd
    impact: float

    @classmethod
    def from_mean_std(cls, name: str, mu: float, sigma: float) -> "AttackScenario":
        ms = BetaMeanStd(mu, sigma)
        return cls(name, ms, attack_impact(ms))

    def to_json(self) -> dict:
        return {"name": self.name, "mu": self.meta.mu, "sigma": self.meta.sigma,
                "impact": self.impact}

    @classmethod
    def from_json(cls, obj: Mapping) -> "AttackScenario":
        sc = cls.from_mean_std(str(obj["name"]), float(obj["mu"]), float(obj["sigma"]))
        if "impact" in obj and abs(float(obj["impact"]) - sc.impact) > 1e-6:
            raise ValidationError(
                f"scenario {sc.name!r}: stored impact {obj['impact']} disagrees with {sc.impact}")
        return sc


def limit_scenario(to_genuine: bool, epsilon: float = DEFAULT_EPSILON) -> AttackScenario:
    """Near-degenerate scenario with the mixing weight pinned at 1 (or 0)."""
    if to_genuine:
        return AttackScenario.from_mean_std("limit-genuine", 1.0 - epsilon, epsilon)
    return AttackScenario.from_mean_std("limit-impostor", epsilon, epsilon)


_PRESETS = (
    ("fingerprint-low", 0.08, 0.09),
    ("fingerprint-med", 0.23, 0.20),
    ("fingerprint-high", 0.40, 0.26),
    ("face-low", 0.38, 0.03),
    ("face-med", 0.78, 0.19),
    ("face-high", 0.91, 0.11),
)


class ScenarioRegistry:
    """Named attack scenarios; ships with the fingerprint and face presets."""

    def __init__(self, scenarios: Iterable[AttackScenario] | None = None):
        self._entries: dict[str, AttackScenario] = {}
        if scenarios is None:
            scenarios = [AttackScenario.from_mean_std(*row) for row in _PRESETS]
        for sc in scenarios:
            self.add(sc)

    def add(self, scenario: AttackScenario) -> None:
        self._entries[scenario.name] = scenario

    def __getitem__(self, name: str) -> AttackScenario:
        try:
            return self._entries[name]
        except KeyError:
            raise ValidationError(
                f"unknown scenario {name!r}; known: {sorted(self._entries)}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def to_json(self) -> list[dict]:
        return [sc.to_json() for sc in self._entries.values()]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, include_presets: bool = True) -> "ScenarioRegistry":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("scenarios", [data])
        reg = cls() if include_presets else cls([])
        for obj in data:
            reg.add(AttackScenario.from_json(obj))
        return reg


DEFAULT_REGISTRY = ScenarioRegistry()


def resolve_scenario(spec, registry: ScenarioRegistry | None = None) -> AttackScenario:
    """Accept a registry name, a scenario JSON object, or an AttackScenario."""
    if isinstance(spec, AttackScenario):
        return spec
    if isinstance(spec, str):
        if spec in ("limit-genuine", "limit-impostor"):
            return limit_scenario(spec == "limit-genuine")
        return (registry or DEFAULT_REGISTRY)[spec]
    if isinstance(spec, Mapping):
        return AttackScenario.from_json(spec)
    raise ValidationError(f"cannot interpret scenario {spec!r}")
