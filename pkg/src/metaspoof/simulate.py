"""Fictitious fake scores and dataset rewriting.

All draws for a given matcher come from substreams keyed by the master seed
and the matcher (and attack level) so impostor row ``j`` always receives the
``j``-th draw, whatever else is simulated in the same run. The genuine and
impostor resampling indices live in their own substreams, which makes
simulations under different scenarios share the same ``(g, i)`` pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._rng import substream
from .beta import AttackScenario, BetaMeanStd, sample_alpha, shape_from_mean_std
from .types import (AttackCombination, MixturePrior, ScoreDataset, ValidationError,
                    combo_key, validate_dataset, validate_prior, enumerate_combinations)


def sample_fake_scores(genuine_pool: Sequence[float], impostor_pool: Sequence[float],
                       ms: BetaMeanStd, n: int, seed: int | Sequence[int | str]) -> np.ndarray:
    """Draw ``n`` scores ``alpha * g + (1 - alpha) * i`` with bootstrap ``g`` and ``i``.

    ``seed`` is either an integer or a tuple ``(seed, *keys)`` naming a substream.
    """
    g_pool = np.asarray(genuine_pool, dtype=np.float64).ravel()
    i_pool = np.asarray(impostor_pool, dtype=np.float64).ravel()
    if g_pool.size == 0 or i_pool.size == 0:
        raise ValidationError("genuine and impostor pools must be non-empty")
    if n < 0:
        raise ValidationError("n must be non-negative")
    keys = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    alpha = sample_alpha(shape_from_mean_std(ms), n, substream(*keys, "alpha"))
    g = g_pool[substream(*keys, "genuine").integers(0, g_pool.size, n)]
    i = i_pool[substream(*keys, "impostor").integers(0, i_pool.size, n)]
    fake = alpha * g + (1.0 - alpha) * i
    return np.clip(fake, np.minimum(g, i), np.maximum(g, i))


@dataclass(frozen=True)
class SpoofPlan:
    """Which matchers are attacked, and with which scenario."""

    combination: AttackCombination
    scenario_per_matcher: Mapping[int, AttackScenario] = field(default_factory=dict)

    def __post_init__(self):
        combo = tuple(int(a) for a in self.combination)
        scen = {int(k): v for k, v in dict(self.scenario_per_matcher).items()}
        attacked = {i for i, a in enumerate(combo) if a != 0}
        if set(scen) != attacked:
            raise ValidationError(
                f"plan {combo_key(combo)}: scenarios given for matchers {sorted(scen)},"
                f" attacked matchers are {sorted(attacked)}")
        object.__setattr__(self, "combination", combo)
        object.__setattr__(self, "scenario_per_matcher", scen)

    @classmethod
    def single(cls, n_matchers: int, matcher: int, scenario: AttackScenario,
               level: int = 1) -> "SpoofPlan":
        combo = [0] * n_matchers
        combo[matcher] = level
        return cls(tuple(combo), {matcher: scenario})

    def to_json(self) -> dict:
        return {
            "combination": combo_key(self.combination),
            "scenarios": {str(i): sc.to_json() for i, sc in sorted(self.scenario_per_matcher.items())},
        }


def spoof_dataset(dataset: ScoreDataset, plan: SpoofPlan, seed: int) -> ScoreDataset:
    """Replace attacked impostor scores with simulated fakes; genuine rows are untouched."""
    validate_dataset(dataset)
    k = dataset.n_matchers
    if len(plan.combination) != k:
        raise ValidationError(
            f"plan has {len(plan.combination)} matchers, dataset has {k}")
    bad = [i for i in plan.scenario_per_matcher if i >= k or i < 0]
    if bad:
        raise ValidationError(f"plan references matcher(s) {bad} outside 0..{k - 1}")
    if not any(plan.combination):
        return dataset
    imp = ~dataset.genuine
    n_imp = int(imp.sum())
    scores = dataset.scores.copy()
    attack = dataset.attack.copy()
    for i, scenario in sorted(plan.scenario_per_matcher.items()):
        fakes = sample_fake_scores(dataset.genuine_scores(i), dataset.impostor_scores(i),
                                   scenario.meta, n_imp, (seed, "spoof", i))
        scores[imp, i] = fakes
        attack[imp, i] = plan.combination[i]
    return dataset.replace_scores(scores, attack)


def resample_training_impostors(dataset: ScoreDataset, prior: MixturePrior,
                                scenarios: Mapping[tuple[int, int], AttackScenario],
                                seed: int) -> ScoreDataset:
    """Redraw each impostor row as a sample of the hypothesized impostor mixture."""
    validate_dataset(dataset)
    k = dataset.n_matchers
    validate_prior(prior, enumerate_combinations(prior.u()))
    if prior.n_matchers != k:
        raise ValidationError(f"prior covers {prior.n_matchers} matchers, dataset has {k}")
    combos = prior.combinations()
    needed = {(i, c[i]) for c, w in prior.weights.items() if w > 0 for i in range(k) if c[i]}
    missing = sorted(needed - set(scenarios))
    if missing:
        raise ValidationError(f"no scenario for (matcher, level) pair(s) {missing}")
    imp_idx = np.flatnonzero(~dataset.genuine)
    n_imp = imp_idx.size
    probs = np.array([prior.weights[c] for c in combos])
    probs = probs / probs.sum()
    drawn = substream(seed, "combination").choice(len(combos), size=n_imp, p=probs)
    drawn_combos = np.array(combos, dtype=np.int64)[drawn]  # (n_imp, K)
    scores = dataset.scores.copy()
    attack = dataset.attack.copy()
    attack[imp_idx] = drawn_combos
    for (i, level) in sorted(needed):
        rows = drawn_combos[:, i] == level
        if not rows.any():
            continue
        fakes = sample_fake_scores(dataset.genuine_scores(i), dataset.impostor_scores(i),
                                   scenarios[(i, level)].meta, n_imp, (seed, "resample", i, level))
        scores[imp_idx[rows], i] = fakes[rows]
    return dataset.replace_scores(scores, attack)


def write_spoofed(dataset: ScoreDataset, plan: SpoofPlan, path: str | Path, seed: int) -> None:
    """Write a rewritten dataset as score CSV plus a ``.plan.json`` sidecar."""
    path = Path(path)
    dataset.to_csv(path)
    sidecar = {"plan": plan.to_json(), "seed": int(seed)}
    path.with_suffix(path.suffix + ".plan.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
