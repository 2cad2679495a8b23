"""Shared value types: score datasets, attack combinations, mixture priors."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

AttackCombination = tuple[int, ...]

PRIOR_SUM_TOL = 1e-9


class ValidationError(ValueError):
    """Malformed input data or parameters."""


class NumericError(ArithmeticError):
    """A numerical procedure failed (non-convergence, singular system, ...)."""


class Label(str, Enum):
    GENUINE = "G"
    IMPOSTOR = "I"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScoreDataset:
    """Labeled matrix of per-matcher scores.

    ``scores`` has shape ``(n, K)``; ``genuine`` is a boolean mask over rows.
    ``attack`` records, per row and matcher, which attack level produced the
    score (0 for untouched scores), so spoofed impostors stay impostors but
    remain traceable to their combination.
    """

    scores: np.ndarray
    genuine: np.ndarray
    client_ids: np.ndarray
    attack: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim == 1:
            scores = scores.reshape(-1, 1)
        n = scores.shape[0]
        genuine = np.asarray(self.genuine, dtype=bool).reshape(n)
        client_ids = np.asarray(self.client_ids, dtype=object).reshape(n)
        if self.attack is None:
            attack = np.zeros(scores.shape, dtype=np.int64)
        else:
            attack = np.asarray(self.attack, dtype=np.int64).reshape(scores.shape)
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "genuine", _frozen(genuine))
        object.__setattr__(self, "client_ids", _frozen(client_ids))
        object.__setattr__(self, "attack", _frozen(attack))

    @property
    def n_matchers(self) -> int:
        return self.scores.shape[1]

    def __len__(self) -> int:
        return self.scores.shape[0]

    @property
    def labels(self) -> list[Label]:
        return [Label.GENUINE if g else Label.IMPOSTOR for g in self.genuine]

    def genuine_scores(self, matcher: int | None = None) -> np.ndarray:
        s = self.scores[self.genuine]
        return s if matcher is None else s[:, matcher]

    def impostor_scores(self, matcher: int | None = None) -> np.ndarray:
        s = self.scores[~self.genuine]
        return s if matcher is None else s[:, matcher]

    def subset(self, mask_or_index) -> "ScoreDataset":
        return ScoreDataset(
            self.scores[mask_or_index],
            self.genuine[mask_or_index],
            self.client_ids[mask_or_index],
            self.attack[mask_or_index],
        )

    def replace_scores(self, scores: np.ndarray, attack: np.ndarray | None = None) -> "ScoreDataset":
        return ScoreDataset(scores, self.genuine, self.client_ids,
                            self.attack if attack is None else attack)

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[Sequence[float], str | Label, str]],
                     n_matchers: int | None = None) -> "ScoreDataset":
        """Build a dataset from ``(scores, label, client_id)`` triples, validating each."""
        rows, labels, ids = [], [], []
        for idx, (sc, label, cid) in enumerate(samples):
            sc = [float(v) for v in sc]
            if n_matchers is None:
                n_matchers = len(sc)
            if len(sc) != n_matchers:
                raise ValidationError(
                    f"sample {idx}: expected {n_matchers} scores, got {len(sc)}")
            try:
                lab = Label(label)
            except ValueError:
                raise ValidationError(f"sample {idx}: unknown label {label!r}") from None
            rows.append(sc)
            labels.append(lab is Label.GENUINE)
            ids.append(str(cid))
        k = n_matchers or 1
        scores = np.array(rows, dtype=np.float64).reshape(len(rows), k)
        return cls(scores, np.array(labels, dtype=bool), np.array(ids, dtype=object))

    def to_csv(self, path: str | Path) -> None:
        write_scores_csv(self, path)


def validate_dataset(dataset: ScoreDataset, require_both_classes: bool = True,
                     normalized: bool = False) -> ScoreDataset:
    """Check dataset invariants; return it unchanged or raise ValidationError."""
    scores = dataset.scores
    if scores.ndim != 2 or scores.shape[1] < 1:
        raise ValidationError("scores must be a 2-D matrix with at least one matcher")
    bad = ~np.isfinite(scores).all(axis=1)
    if bad.any():
        raise ValidationError(f"sample {int(np.flatnonzero(bad)[0])}: non-finite score")
    if normalized:
        out = ((scores < 0) | (scores > 1)).any(axis=1)
        if out.any():
            raise ValidationError(f"sample {int(np.flatnonzero(out)[0])}: score outside [0, 1]")
    if require_both_classes:
        if not dataset.genuine.any():
            raise ValidationError("dataset has no genuine samples")
        if dataset.genuine.all():
            raise ValidationError("dataset has no impostor samples")
    return dataset


def enumerate_combinations(u: Sequence[int]) -> list[AttackCombination]:
    """All attack combinations for ``u[i]`` attacks per matcher, lexicographic, zero first."""
    u = tuple(int(v) for v in u)
    if not u:
        raise ValidationError("u must name at least one matcher")
    if any(v < 1 for v in u):
        raise ValidationError(f"every u_i must be >= 1, got {u}")
    return list(itertools.product(*(range(v + 1) for v in u)))


def combo_key(combo: AttackCombination) -> str:
    return ",".join(str(int(a)) for a in combo)


def parse_combo(key: str | Sequence[int]) -> AttackCombination:
    if isinstance(key, str):
        return tuple(int(v) for v in key.split(","))
    return tuple(int(v) for v in key)


@dataclass(frozen=True)
class MixturePrior:
    """Probability of each attack combination among impostor claims."""

    weights: Mapping[AttackCombination, float]

    def __post_init__(self):
        object.__setattr__(self, "weights",
                           {parse_combo(k): float(v) for k, v in dict(self.weights).items()})

    @property
    def n_matchers(self) -> int:
        return len(next(iter(self.weights)))

    @property
    def zero_effort(self) -> float:
        return self.weights.get((0,) * self.n_matchers, 0.0)

    def combinations(self) -> list[AttackCombination]:
        return sorted(self.weights)

    def u(self) -> tuple[int, ...]:
        return tuple(max(c[i] for c in self.weights) for i in range(self.n_matchers))

    def nonzero(self) -> dict[AttackCombination, float]:
        return {c: w for c, w in sorted(self.weights.items()) if w > 0}

    def to_json(self) -> dict[str, float]:
        return {combo_key(c): w for c, w in sorted(self.weights.items())}

    @classmethod
    def from_json(cls, obj: Mapping[str, float]) -> "MixturePrior":
        return cls({parse_combo(k): v for k, v in obj.items()})

    @classmethod
    def zero_effort_only(cls, u: Sequence[int]) -> "MixturePrior":
        combos = enumerate_combinations(u)
        return cls({c: (1.0 if not any(c) else 0.0) for c in combos})


def validate_prior(prior: MixturePrior, combos: Sequence[AttackCombination]) -> MixturePrior:
    expected = {tuple(c) for c in combos}
    got = set(prior.weights)
    missing = expected - got
    extra = got - expected
    if missing:
        raise ValidationError(f"prior is missing combinations {sorted(map(combo_key, missing))}")
    if extra:
        raise ValidationError(f"prior has unknown combinations {sorted(map(combo_key, extra))}")
    neg = [combo_key(c) for c, w in prior.weights.items() if not (w >= 0) or math.isnan(w)]
    if neg:
        raise ValidationError(f"negative prior weight for {neg}")
    total = math.fsum(prior.weights.values())
    if abs(total - 1.0) > PRIOR_SUM_TOL:
        raise ValidationError(f"prior weights sum to {total!r}, not 1")
    return prior


# ---------------------------------------------------------------------------
# Score CSV: header ``client_id,s1,...,sK,label`` with label in {G, I}


def read_scores_csv(path: str | Path) -> ScoreDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        k = len(header) - 2
        if (k < 1 or header[0] != "client_id" or header[-1] != "label"
                or header[1:-1] != [f"s{i + 1}" for i in range(k)]):
            raise ValidationError(f"{path}:1: bad header {header!r}")
        rows, labels, ids = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != k + 2:
                raise ValidationError(f"{path}:{lineno}: expected {k + 2} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[1:-1]]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"{path}:{lineno}: non-finite score")
            lab = row[-1].strip()
            if lab not in ("G", "I"):
                raise ValidationError(f"{path}:{lineno}: unknown label {lab!r}")
            rows.append(vals)
            labels.append(lab == "G")
            ids.append(row[0].strip())
    scores = np.array(rows, dtype=np.float64).reshape(len(rows), k)
    return ScoreDataset(scores, np.array(labels, dtype=bool), np.array(ids, dtype=object))


def format_scores_csv(dataset: ScoreDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["client_id", *[f"s{i + 1}" for i in range(dataset.n_matchers)], "label"])
    for sc, g, cid in zip(dataset.scores, dataset.genuine, dataset.client_ids):
        w.writerow([cid, *[repr(float(v)) for v in sc], "G" if g else "I"])
    return buf.getvalue()


def write_scores_csv(dataset: ScoreDataset, path: str | Path) -> None:
    Path(path).write_text(format_scores_csv(dataset), encoding="utf-8")


def read_score_list(path: str | Path) -> np.ndarray:
    """Read a single-matcher score file: either a score CSV with K=1 or one number per line."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = text.lstrip().split("\n", 1)[0]
    if first.startswith("client_id"):
        ds = read_scores_csv(path)
        if ds.n_matchers != 1:
            raise ValidationError(f"{path}: expected a single-matcher file, got K={ds.n_matchers}")
        return ds.scores[:, 0].copy()
    vals = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            v = float(line)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not math.isfinite(v):
            raise ValidationError(f"{path}:{lineno}: non-finite score")
        vals.append(v)
    return np.array(vals, dtype=np.float64)
