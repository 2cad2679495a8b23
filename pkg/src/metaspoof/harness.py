"""End-to-end security evaluation.

Builds chimerical multimodal datasets, splits them by client, normalizes,
trains every configured fusion rule, fixes its threshold at the maximum
admissible FRR, and measures FAR, per-combination SFAR and GFAR. Also
produces impact-bucketed uncertainty bands and ranks rules by GFAR.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._rng import derive_seed, substream
from .beta import (AttackScenario, BetaShape, ScenarioRegistry, DEFAULT_REGISTRY,
                   limit_scenario, resolve_scenario)
from .fusion import (C_GRID, GAMMA_GRID, RULES, FixedRule, select_hyperparams, train_lda,
                     train_llr, train_secure_llr, train_svm_rbf)
from .metrics import (DEFAULT_FRR_MAX, ConfidenceBand, DetCurve, average_det, default_frr_grid,
                      det_curve, error_rates_at, gfar, impact_bands, threshold_for_frr)
from .simulate import SpoofPlan, resample_training_impostors, spoof_dataset
from .types import (AttackCombination, MixturePrior, NumericError, ScoreDataset, ValidationError,
                    combo_key, enumerate_combinations, parse_combo, validate_dataset,
                    validate_prior)

log = logging.getLogger(__name__)

REPORT_SCHEMA = "metaspoof.eval_report/1"


# ---------------------------------------------------------------------------
# Synthetic scores


@dataclass(frozen=True)
class MatcherSpec:
    genuine: tuple[float, float] = (8.0, 2.0)
    impostor: tuple[float, float] = (2.0, 8.0)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Beta score distributions per matcher."""

    matchers: tuple[MatcherSpec, ...] = (MatcherSpec(), MatcherSpec())
    n_clients: int = 500
    genuine_per_client: int = 4
    impostor_per_client: int = 4

    def __post_init__(self):
        ms = tuple(m if isinstance(m, MatcherSpec) else
                   MatcherSpec(tuple(m["genuine"]), tuple(m["impostor"])) for m in self.matchers)
        object.__setattr__(self, "matchers", ms)
        for i, m in enumerate(ms):
            g, imp = BetaShape(*m.genuine), BetaShape(*m.impostor)
            if not g.mean > imp.mean:
                raise ValidationError(f"matcher {i}: genuine mean must exceed impostor mean")
        if min(self.n_clients, self.genuine_per_client, self.impostor_per_client) < 0:
            raise ValidationError("counts must be non-negative")

    def unimodal(self, matcher: int) -> "SyntheticSpec":
        return SyntheticSpec((self.matchers[matcher],), self.n_clients,
                             self.genuine_per_client, self.impostor_per_client)

    def to_json(self) -> dict:
        return {"matchers": [{"genuine": list(m.genuine), "impostor": list(m.impostor)}
                             for m in self.matchers],
                "n_clients": self.n_clients, "genuine_per_client": self.genuine_per_client,
                "impostor_per_client": self.impostor_per_client}

    @classmethod
    def from_json(cls, obj: Mapping) -> "SyntheticSpec":
        defaults = cls()
        return cls(tuple(obj.get("matchers", [asdict(m) for m in defaults.matchers])),
                   int(obj.get("n_clients", defaults.n_clients)),
                   int(obj.get("genuine_per_client", defaults.genuine_per_client)),
                   int(obj.get("impostor_per_client", defaults.impostor_per_client)))


def synth_scores(spec: SyntheticSpec, seed: int, prefix: str = "c") -> ScoreDataset:
    """Draw every client's genuine and impostor claims from the spec, matcher by matcher."""
    n_g, n_i = spec.genuine_per_client, spec.impostor_per_client
    per_client = n_g + n_i
    n = spec.n_clients * per_client
    genuine = np.tile(np.r_[np.ones(n_g, bool), np.zeros(n_i, bool)], spec.n_clients)
    ids = np.repeat(np.array([f"{prefix}{j:05d}" for j in range(spec.n_clients)], dtype=object),
                    per_client)
    scores = np.empty((n, len(spec.matchers)))
    for i, m in enumerate(spec.matchers):
        rng = substream(seed, "synth", i)
        gp, ip = BetaShape(*m.genuine), BetaShape(*m.impostor)
        scores[genuine, i] = rng.beta(gp.p, gp.q, int(genuine.sum()))
        scores[~genuine, i] = rng.beta(ip.p, ip.q, int((~genuine).sum()))
    return ScoreDataset(scores, genuine, ids)


# ---------------------------------------------------------------------------
# Chimerical datasets, splits, normalization


def build_chimerical(set_a: ScoreDataset, set_b: ScoreDataset, seed: int) -> ScoreDataset:
    """Pair clients of two unimodal sets at random into virtual two-matcher clients.

    A virtual client's genuine claims pair genuine scores of both real clients
    in order of appearance, and likewise for impostor claims; surplus claims of
    either side are dropped.
    """
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValidationError("chimerical pairing needs two non-empty datasets")
    if set_a.n_matchers != 1 or set_b.n_matchers != 1:
        raise ValidationError("chimerical pairing expects unimodal datasets")
    clients_a = list(dict.fromkeys(set_a.client_ids.tolist()))
    clients_b = list(dict.fromkeys(set_b.client_ids.tolist()))
    n = min(len(clients_a), len(clients_b))
    rng = substream(seed, "chimerical")
    pick_a = [clients_a[j] for j in sorted(rng.permutation(len(clients_a))[:n])]
    pick_b = [clients_b[j] for j in rng.permutation(len(clients_b))[:n]]

    def rows_by_client(ds):
        out: dict[Any, list[int]] = {}
        for j, c in enumerate(ds.client_ids):
            out.setdefault(c, []).append(j)
        return out

    rows_a, rows_b = rows_by_client(set_a), rows_by_client(set_b)
    scores, genuine, ids = [], [], []
    for ca, cb in zip(pick_a, pick_b):
        for label in (True, False):
            ra = [j for j in rows_a[ca] if set_a.genuine[j] == label]
            rb = [j for j in rows_b[cb] if set_b.genuine[j] == label]
            for ja, jb in zip(ra, rb):
                scores.append((set_a.scores[ja, 0], set_b.scores[jb, 0]))
                genuine.append(label)
                ids.append(f"{ca}+{cb}")
    return ScoreDataset(np.array(scores, dtype=np.float64).reshape(-1, 2),
                        np.array(genuine, dtype=bool), np.array(ids, dtype=object))


def split_by_client(dataset: ScoreDataset, train_fraction: float, seed: int
                    ) -> tuple[ScoreDataset, ScoreDataset]:
    clients = list(dict.fromkeys(dataset.client_ids.tolist()))
    n_train = int(math.floor(train_fraction * len(clients) + 1e-9))
    if n_train < 1 or n_train >= len(clients):
        raise ValidationError(
            f"{len(clients)} clients cannot be split {train_fraction:.0%}/{1 - train_fraction:.0%}")
    order = substream(seed, "split").permutation(len(clients))
    train_clients = {clients[j] for j in order[:n_train]}
    mask = np.array([c in train_clients for c in dataset.client_ids])
    return dataset.subset(mask), dataset.subset(~mask)


def split_runs(dataset, train_fraction: float = 0.4, n_pairings: int = 5, n_splits: int = 5,
               seed: int = 0) -> list[tuple[ScoreDataset, ScoreDataset]]:
    """``n_pairings * n_splits`` client-disjoint (train, test) pairs.

    ``dataset`` is either a multimodal ScoreDataset, or a tuple of two unimodal
    datasets from which a fresh chimerical dataset is built per pairing.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValidationError("train_fraction must lie in (0, 1)")
    runs = []
    for p in range(n_pairings):
        if isinstance(dataset, tuple):
            ds = build_chimerical(dataset[0], dataset[1], derive_seed(seed, "pairing", p))
        else:
            ds = dataset
        for s in range(n_splits):
            runs.append(split_by_client(ds, train_fraction, derive_seed(seed, "split", p, s)))
    return runs


@dataclass(frozen=True)
class MinMax:
    low: np.ndarray
    high: np.ndarray

    def apply(self, ds: ScoreDataset, clip: bool = True) -> ScoreDataset:
        s = (ds.scores - self.low) / (self.high - self.low)
        if clip:
            s = np.clip(s, 0.0, 1.0)
        return ds.replace_scores(s)


def fit_minmax(train: ScoreDataset) -> MinMax:
    low, high = train.scores.min(axis=0), train.scores.max(axis=0)
    if np.any(high <= low):
        bad = np.flatnonzero(high <= low).tolist()
        raise ValidationError(f"constant training column(s) {bad}; min-max map undefined")
    return MinMax(low, high)


def minmax_normalize(train: ScoreDataset, others: Sequence[ScoreDataset] = ()
                     ) -> tuple[ScoreDataset, list[ScoreDataset]]:
    """Fit a per-matcher min-max map on ``train`` and apply it everywhere (clipping others)."""
    mm = fit_minmax(train)
    return mm.apply(train, clip=False), [mm.apply(o) for o in others]


# ---------------------------------------------------------------------------
# Uncertainty grid


def uncertainty_grid(n: int, seed: int, return_proposals: bool = False):
    """``n`` scenarios drawn uniformly from the feasible ``(mu, sigma)`` region, sorted by impact."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    rng = substream(seed, "uncertainty-grid")
    accepted: list[tuple[float, float]] = []
    proposals = 0
    while len(accepted) < n:
        batch = max(64, 2 * (n - len(accepted)))
        mu = rng.random(batch)
        sigma = rng.random(batch)
        for m, s in zip(mu, sigma):
            proposals += 1
            if 0.0 < m < 1.0 and 0.0 < s < math.sqrt(m * (1.0 - m)):
                accepted.append((float(m), float(s)))
                if len(accepted) == n:
                    break
    scenarios = [AttackScenario.from_mean_std(f"grid-{j:04d}", m, s)
                 for j, (m, s) in enumerate(accepted)]
    scenarios.sort(key=lambda sc: (sc.impact, sc.name))
    if return_proposals:
        return scenarios, proposals
    return scenarios


# ---------------------------------------------------------------------------
# Experiment configuration


DEFAULT_PRIOR = {"0,0": 0.5, "0,1": 0.25, "1,0": 0.25, "1,1": 0.0}


@dataclass(frozen=True)
class ExperimentConfig:
    rules: tuple[str, ...] = RULES
    scenarios: tuple[tuple[str | dict, ...], ...] = (("fingerprint-high",), ("face-high",))
    combinations: tuple[AttackCombination, ...] | None = None
    prior: MixturePrior = field(default_factory=lambda: MixturePrior.from_json(DEFAULT_PRIOR))
    training_prior: MixturePrior | None = None
    frr_max: float = DEFAULT_FRR_MAX
    grid_n: int = 400
    train_fraction: float = 0.4
    n_pairings: int = 5
    n_splits: int = 5
    seed: int = 0
    C_grid: tuple[float, ...] = C_GRID
    gamma_grid: tuple[float, ...] = GAMMA_GRID
    folds: int = 5
    svm_tol: float = 1e-3
    threshold_mode: str = "test"
    alpha_fake_density: str = "gamma"
    alpha_sim_size: int = 100_000
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    data: Mapping[str, str] | None = None
    band_rules: tuple[str, ...] = ("sum",)
    band_runs: int | None = None
    band_envelope: str = "minmax"

    def __post_init__(self):
        unknown = [r for r in self.rules if r not in RULES]
        if unknown:
            raise ValidationError(f"unknown rule(s) {unknown}; supported rules: {list(RULES)}")
        unknown = [r for r in self.band_rules if r not in RULES]
        if unknown:
            raise ValidationError(f"unknown band rule(s) {unknown}; supported rules: {list(RULES)}")
        if not (0.0 <= self.frr_max < 1.0):
            raise ValidationError("frr_max must lie in [0, 1)")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.threshold_mode not in ("test", "train"):
            raise ValidationError("threshold_mode must be 'test' or 'train'")
        if self.synthetic is None and not self.data:
            raise ValidationError("config needs either synthetic data or data paths")
        u = self.u
        validate_prior(self.prior, enumerate_combinations(u))
        if self.training_prior is not None:
            validate_prior(self.training_prior, enumerate_combinations(u))
        for c in self.evaluated_combinations():
            if len(c) != len(u) or any(not (0 <= a <= ui) for a, ui in zip(c, u)):
                raise ValidationError(f"combination {combo_key(c)} outside levels {u}")
        self.scenario_map()

    @property
    def u(self) -> tuple[int, ...]:
        return tuple(len(levels) for levels in self.scenarios)

    @property
    def n_runs(self) -> int:
        return self.n_pairings * self.n_splits

    def scenario_map(self, registry: ScenarioRegistry | None = None
                     ) -> dict[tuple[int, int], AttackScenario]:
        return {(i, a + 1): resolve_scenario(spec, registry)
                for i, levels in enumerate(self.scenarios) for a, spec in enumerate(levels)}

    def evaluated_combinations(self) -> list[AttackCombination]:
        if self.combinations is not None:
            combos = {tuple(c) for c in self.combinations}
        else:
            k = len(self.scenarios)
            combos = set()
            for i, levels in enumerate(self.scenarios):
                for a in range(1, len(levels) + 1):
                    c = [0] * k
                    c[i] = a
                    combos.add(tuple(c))
        zero = (0,) * len(self.scenarios)
        combos |= {c for c, w in self.prior.weights.items() if w > 0 and c != zero}
        combos.discard(zero)
        return sorted(combos)

    def secure_prior(self) -> MixturePrior:
        return self.training_prior or self.prior

    def to_json(self) -> dict:
        return {
            "rules": list(self.rules),
            "scenarios": [list(levels) for levels in self.scenarios],
            "combinations": None if self.combinations is None
            else [combo_key(c) for c in self.combinations],
            "prior": self.prior.to_json(),
            "training_prior": None if self.training_prior is None else self.training_prior.to_json(),
            "frr_max": self.frr_max, "grid_n": self.grid_n,
            "train_fraction": self.train_fraction, "n_pairings": self.n_pairings,
            "n_splits": self.n_splits, "seed": self.seed,
            "C_grid": list(self.C_grid), "gamma_grid": list(self.gamma_grid),
            "folds": self.folds, "svm_tol": self.svm_tol,
            "threshold_mode": self.threshold_mode,
            "alpha_fake_density": self.alpha_fake_density,
            "alpha_sim_size": self.alpha_sim_size,
            "synthetic": None if self.synthetic is None else self.synthetic.to_json(),
            "data": None if self.data is None else dict(self.data),
            "band_rules": list(self.band_rules), "band_runs": self.band_runs,
            "band_envelope": self.band_envelope,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(obj) - known)
        if extra:
            raise ValidationError(f"unknown config key(s) {extra}")
        kw: dict[str, Any] = {}
        for key, val in obj.items():
            if key in ("rules", "band_rules", "C_grid", "gamma_grid"):
                kw[key] = tuple(val)
            elif key == "scenarios":
                kw[key] = tuple(tuple(levels) for levels in val)
            elif key == "combinations":
                kw[key] = None if val is None else tuple(parse_combo(c) for c in val)
            elif key in ("prior", "training_prior"):
                kw[key] = None if val is None else MixturePrior.from_json(val)
            elif key == "synthetic":
                kw[key] = None if val is None else SyntheticSpec.from_json(val)
            else:
                kw[key] = val
        if "prior" in kw and kw["prior"] is None:
            raise ValidationError("prior must not be null")
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_json(obj)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def prepare_runs(config: ExperimentConfig) -> list[tuple[ScoreDataset, ScoreDataset]]:
    """Raw (unnormalized) client-disjoint splits for the configured data source."""
    from .types import read_scores_csv

    if config.data:
        if "scores" in config.data:
            source = read_scores_csv(config.data["scores"])
        else:
            source = (read_scores_csv(config.data["set_a"]), read_scores_csv(config.data["set_b"]))
    else:
        spec = config.synthetic
        if len(spec.matchers) == 2:
            source = (synth_scores(spec.unimodal(0), derive_seed(config.seed, "synth", 0), "a"),
                      synth_scores(spec.unimodal(1), derive_seed(config.seed, "synth", 1), "b"))
        else:
            source = synth_scores(spec, derive_seed(config.seed, "synth"))
    return split_runs(source, config.train_fraction, config.n_pairings, config.n_splits,
                      derive_seed(config.seed, "runs"))


# ---------------------------------------------------------------------------
# Training


def train_rule(rule: str, train: ScoreDataset, config: ExperimentConfig, seed: int):
    """Train one fusion rule on a normalized training split; returns ``(model, info)``."""
    info: dict[str, Any] = {}
    if rule in ("sum", "product", "minimum"):
        return FixedRule(rule), info
    if rule == "lda":
        return train_lda(train), info
    if rule == "llr":
        return train_llr(train), info
    scenarios = config.scenario_map()
    prior = config.secure_prior()
    if rule in ("extended_llr", "uniform_llr", "alpha_llr"):
        variant = rule.split("_")[0]
        model = train_secure_llr(train, prior, variant, scenarios, seed=derive_seed(seed, rule),
                                 n_sim=config.alpha_sim_size,
                                 fake_density=config.alpha_fake_density)
        return model, info
    if rule == "svm_rbf":
        (C, g) = select_hyperparams(train, config.C_grid, config.gamma_grid, config.folds,
                                    "far_at_frr2", seed=derive_seed(seed, "cv"),
                                    frr_max=config.frr_max, tol=config.svm_tol)
        info.update(C=C, gamma=g)
        return train_svm_rbf(train, C, g, config.svm_tol), info
    if rule == "alpha_svm_rbf":
        rs_seed = derive_seed(seed, "resample")

        def resampler(ds):
            return resample_training_impostors(ds, prior, scenarios, rs_seed)

        (C, g) = select_hyperparams(train, config.C_grid, config.gamma_grid, config.folds,
                                    "gfar_at_frr2", resampler=resampler,
                                    seed=derive_seed(seed, "cv"), frr_max=config.frr_max,
                                    tol=config.svm_tol)
        info.update(C=C, gamma=g)
        return train_svm_rbf(resampler(train), C, g, config.svm_tol), info
    raise ValidationError(f"unknown rule {rule!r}; supported rules: {list(RULES)}")


# ---------------------------------------------------------------------------
# Security evaluation


def _plan_for(combo: AttackCombination, scenarios: Mapping[tuple[int, int], AttackScenario]
              ) -> SpoofPlan:
    return SpoofPlan(combo, {i: scenarios[(i, a)] for i, a in enumerate(combo) if a})


def _evaluate_run(config: ExperimentConfig, run: int, train_raw: ScoreDataset,
                  test_raw: ScoreDataset) -> dict:
    train, (test,) = minmax_normalize(train_raw, [test_raw])
    validate_dataset(train, normalized=True)
    validate_dataset(test, normalized=True)
    scenarios = config.scenario_map()
    combos = config.evaluated_combinations()
    spoofed = {c: spoof_dataset(test, _plan_for(c, scenarios),
                                derive_seed(config.seed, "eval", run, combo_key(c)))
               for c in combos}
    imp = ~test.genuine
    grid = default_frr_grid(operating=config.frr_max)
    out: dict[str, dict] = {}
    for rule in config.rules:
        try:
            model, info = train_rule(rule, train, config, derive_seed(config.seed, "train", run, rule))
            fused = model.score(test.scores)
            g, x = fused[test.genuine], fused[imp]
            if config.threshold_mode == "test":
                t = threshold_for_frr(g, config.frr_max)
            else:
                t = threshold_for_frr(model.score(train.genuine_scores()), config.frr_max)
            frr, far = error_rates_at(g, x, t)
            sfar, dets = {}, {"no_spoof": det_curve(g, x).far_at(grid)}
            for c in combos:
                xs = model.score(spoofed[c].scores)[imp]
                sfar[c] = error_rates_at(g, xs, t)[1]
                dets[combo_key(c)] = det_curve(g, xs).far_at(grid)
        except (ValidationError, NumericError) as exc:
            raise type(exc)(f"rule {rule!r}, run {run}: {exc}") from exc
        out[rule] = {
            "run": run, "threshold": t, "frr": frr, "far": far,
            "sfar": {combo_key(c): v for c, v in sfar.items()},
            "gfar": gfar(far, sfar, config.prior),
            "hyperparams": info, "det": dets,
        }
    return out


def _run_tasks(fn, tasks, jobs: int):
    if jobs and jobs > 1 and len(tasks) > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=jobs)(delayed(fn)(*t) for t in tasks)
    return [fn(*t) for t in tasks]


def _summary(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=0))


def evaluate_security(config: ExperimentConfig,
                      runs: Sequence[tuple[ScoreDataset, ScoreDataset]] | None = None,
                      jobs: int = 1) -> dict:
    """Evaluate every configured rule on every run; returns the report as a JSON-ready dict."""
    if runs is None:
        runs = prepare_runs(config)
    results = _run_tasks(lambda j, tr, te: _evaluate_run(config, j, tr, te),
                         [(j, tr, te) for j, (tr, te) in enumerate(runs)], jobs)
    combos = [combo_key(c) for c in config.evaluated_combinations()]
    grid = default_frr_grid(operating=config.frr_max)
    rules: dict[str, dict] = {}
    for rule in config.rules:
        per_run = [results[j][rule] for j in range(len(runs))]
        frr_m, frr_s = _summary([r["frr"] for r in per_run])
        far_m, far_s = _summary([r["far"] for r in per_run])
        sfar_m = {c: _summary([r["sfar"][c] for r in per_run])[0] for c in combos}
        sfar_s = {c: _summary([r["sfar"][c] for r in per_run])[1] for c in combos}
        gfar_m = gfar(far_m, {parse_combo(c): v for c, v in sfar_m.items()}, config.prior)
        gfar_s = _summary([r["gfar"] for r in per_run])[1]
        det = {"frr": grid.tolist()}
        for key in ["no_spoof", *combos]:
            det[key] = np.mean([r["det"][key] for r in per_run], axis=0).tolist()
        rules[rule] = {
            "mean": {"frr": frr_m, "far": far_m, "sfar": sfar_m, "gfar": gfar_m},
            "std": {"frr": frr_s, "far": far_s, "sfar": sfar_s, "gfar": gfar_s},
            "runs": [{k: v for k, v in r.items() if k != "det"} for r in per_run],
            "det": det,
        }
    report = {
        "schema": REPORT_SCHEMA,
        "config_hash": config.digest(),
        "meta": {
            "seed": config.seed, "n_runs": len(runs), "frr_max": config.frr_max,
            "threshold_mode": config.threshold_mode, "prior": config.prior.to_json(),
            "combinations": combos,
            "scenarios": {f"{i}:{a}": sc.to_json()
                          for (i, a), sc in sorted(config.scenario_map().items())},
        },
        "rules": rules,
    }
    report["table"] = report_table(report)
    return report


def report_table(report: Mapping) -> dict:
    """FAR / SFAR / GFAR rows by rule, laid out like the usual results table."""
    rules = list(report["rules"])
    rows = [{"metric": "FAR", "mean": [report["rules"][r]["mean"]["far"] for r in rules],
             "std": [report["rules"][r]["std"]["far"] for r in rules]}]
    for c in report["meta"]["combinations"]:
        rows.append({"metric": f"SFAR[{c}]",
                     "mean": [report["rules"][r]["mean"]["sfar"][c] for r in rules],
                     "std": [report["rules"][r]["std"]["sfar"][c] for r in rules]})
    rows.append({"metric": "GFAR", "mean": [report["rules"][r]["mean"]["gfar"] for r in rules],
                 "std": [report["rules"][r]["std"]["gfar"] for r in rules]})
    return {"columns": rules, "rows": rows}


def table_csv(report: Mapping) -> str:
    import csv
    import io

    tab = report.get("table") or report_table(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", *tab["columns"]])
    for row in tab["rows"]:
        w.writerow([row["metric"], *[f"{100 * m:.1f} +- {100 * s:.1f}"
                                     for m, s in zip(row["mean"], row["std"])]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Rule selection


@dataclass(frozen=True)
class SelectionReport:
    selected: str
    ranking: list[dict]
    frr_max: float
    prior: MixturePrior

    def to_json(self) -> dict:
        return {"schema": "metaspoof.selection/1", "selected": self.selected, "frr_max": self.frr_max,
                "prior": self.prior.to_json(), "ranking": self.ranking}


def select_rule(reports: Sequence[Mapping], prior: MixturePrior,
                frr_max: float = DEFAULT_FRR_MAX) -> SelectionReport:
    """Rule with minimum criterion GFAR among those meeting the FRR constraint."""
    rows = []
    zero = (0,) * prior.n_matchers
    for rep in reports:
        for rule, res in rep["rules"].items():
            m = res["mean"]
            sfar = {parse_combo(c): v for c, v in m["sfar"].items()}
            try:
                g = gfar(m["far"], sfar, prior)
            except ValidationError as exc:
                raise ValidationError(f"rule {rule!r}: {exc}") from None
            rows.append({"rule": rule, "frr": m["frr"], "far": m["far"], "gfar": g,
                         "feasible": m["frr"] <= frr_max + 1e-12,
                         "sfar": {combo_key(c): v for c, v in sorted(sfar.items())
                                  if prior.weights.get(c, 0) > 0 and c != zero}})
    rows.sort(key=lambda r: (not r["feasible"], r["gfar"], r["far"], r["rule"]))
    feasible = [r for r in rows if r["feasible"]]
    if not feasible:
        raise ValidationError(f"no rule attains FRR <= {frr_max}")
    return SelectionReport(feasible[0]["rule"], rows, frr_max, prior)


# ---------------------------------------------------------------------------
# Uncertainty bands


def compute_bands(config: ExperimentConfig,
                  runs: Sequence[tuple[ScoreDataset, ScoreDataset]] | None = None,
                  registry: ScenarioRegistry | None = None, registry_only: bool = False,
                  verify: bool = False) -> dict:
    """Impact bands of SFAR-vs-FRR curves per (rule, attacked matcher).

    Each scenario's DET curve is the vertical average over the used runs.
    Registry scenarios and both limit cases are reported alongside; with
    ``verify`` their pointwise containment in the band is checked.
    """
    if runs is None:
        runs = prepare_runs(config)
    if config.band_runs is not None:
        runs = list(runs)[:config.band_runs]
    registry = registry or DEFAULT_REGISTRY
    grid = default_frr_grid(operating=config.frr_max)
    prepared = []
    for j, (tr_raw, te_raw) in enumerate(runs):
        tr, (te,) = minmax_normalize(tr_raw, [te_raw])
        models = {r: train_rule(r, tr, config, derive_seed(config.seed, "train", j, r))[0]
                  for r in config.band_rules}
        prepared.append((te, models))
    k = prepared[0][0].n_matchers
    refs = list(registry)
    if not registry_only:
        refs += [limit_scenario(False), limit_scenario(True)]
    out: dict[str, Any] = {"schema": "metaspoof.bands/1", "config_hash": config.digest(),
                           "grid_n": 0 if registry_only else config.grid_n,
                           "n_runs": len(prepared), "frr": grid.tolist(), "bands": []}
    warnings = []
    for i in range(k):
        grid_sc = [] if registry_only else uncertainty_grid(
            config.grid_n, derive_seed(config.seed, "grid", i))
        curves: dict[str, dict[str, DetCurve]] = {r: {} for r in config.band_rules}
        for sc in [*grid_sc, *refs]:
            plan = SpoofPlan.single(k, i, sc)
            per_rule: dict[str, list[DetCurve]] = {r: [] for r in config.band_rules}
            for j, (te, models) in enumerate(prepared):
                sp = spoof_dataset(te, plan, derive_seed(config.seed, "band", j, i))
                imp = ~te.genuine
                for r, model in models.items():
                    g = model.score(te.genuine_scores())
                    per_rule[r].append(det_curve(g, model.score(sp.scores[imp])))
            for r in config.band_rules:
                avg = average_det(per_rule[r], grid)
                curves[r][sc.name] = DetCurve(avg.thresholds, avg.frr, avg.far,
                                              {"scenario": sc.name, "impact": sc.impact})
        for r in config.band_rules:
            grid_curves = [curves[r][sc.name] for sc in grid_sc]
            band = impact_bands(grid_curves, frr_grid=grid, envelope=config.band_envelope)
            if band.empty and not registry_only:
                warnings.append(f"rule {r}, matcher {i}: empty uncertainty grid, no band")
            entry = {"rule": r, "matcher": i, "band": band.to_json(),
                     "references": {sc.name: {"impact": sc.impact,
                                              "far": curves[r][sc.name].far.tolist()}
                                    for sc in refs}}
            if verify and not band.empty:
                entry["containment"] = {sc.name: bool(band.contains(curves[r][sc.name]).all())
                                        for sc in refs}
            out["bands"].append(entry)
    out["warnings"] = warnings
    return out
