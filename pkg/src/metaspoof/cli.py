"""Command-line front end.

Every subcommand is a pure function of its input files, flags and seed.
JSON goes to ``--out`` (or stdout) with sorted keys. On failure a JSON error
object is printed to stdout and a one-line summary to stderr; the exit code is
2 for invalid input and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .beta import (DEFAULT_EPSILON, DEFAULT_REGISTRY, AttackScenario, ScenarioRegistry,
                   fit_meta_parameters, resolve_scenario)
from .fusion import RULES
from .harness import (ExperimentConfig, SyntheticSpec, compute_bands, evaluate_security,
                      fit_minmax, select_rule, synth_scores, table_csv, train_rule)
from .metrics import DEFAULT_FRR_MAX
from .simulate import SpoofPlan, sample_fake_scores, spoof_dataset
from .types import (MixturePrior, NumericError, ValidationError, format_scores_csv,
                    read_score_list, read_scores_csv)

DEFAULT_SEED = 0

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("metaspoof")


@lru_cache(maxsize=None)
def _schema(name: str) -> dict:
    text = resources.files("metaspoof").joinpath("schemas", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def check_schema(obj: Any, name: str) -> None:
    import jsonschema

    try:
        jsonschema.validate(obj, _schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"{name} document invalid at {where}: {exc.message}") from None


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def _registry(args) -> ScenarioRegistry:
    return ScenarioRegistry.load(args.registry) if getattr(args, "registry", None) else DEFAULT_REGISTRY


def _scenario_arg(args) -> AttackScenario:
    if args.scenario and args.mu is not None:
        raise ValidationError("give either --scenario or --mu/--sigma, not both")
    if args.scenario:
        return resolve_scenario(args.scenario, _registry(args))
    if args.mu is None or args.sigma is None:
        raise ValidationError("a scenario is required: --scenario NAME or --mu M --sigma S")
    return AttackScenario.from_mean_std(args.name or "custom", args.mu, args.sigma)


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        obj = _load_json(args.config)
        check_schema(obj, "config")
        cfg = ExperimentConfig.from_json(obj)
    else:
        cfg = ExperimentConfig()
    over: dict[str, Any] = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.frr_max is not None:
        over["frr_max"] = args.frr_max
    if getattr(args, "grid_n", None) is not None:
        over["grid_n"] = args.grid_n
    data = {}
    if getattr(args, "scores", None):
        data["scores"] = args.scores
    if getattr(args, "set_a", None) or getattr(args, "set_b", None):
        if not (args.set_a and args.set_b):
            raise ValidationError("--set-a and --set-b go together")
        data.update(set_a=args.set_a, set_b=args.set_b)
    if data and getattr(args, "synthetic", False):
        raise ValidationError("--synthetic conflicts with score file inputs")
    if data:
        over["data"] = data
    elif getattr(args, "synthetic", False):
        over["data"] = None
        if cfg.synthetic is None:
            over["synthetic"] = SyntheticSpec()
    return dataclasses.replace(cfg, **over) if over else cfg


# ---------------------------------------------------------------------------
# Subcommands


def cmd_fit(args) -> int:
    diag: dict = {}
    ms = fit_meta_parameters(read_score_list(args.genuine), read_score_list(args.impostor),
                             read_score_list(args.fake), args.epsilon, diagnostics=diag)
    sc = AttackScenario.from_mean_std(args.name or "fitted", ms.mu, ms.sigma)
    out = {"schema": "metaspoof.scenario/1", **sc.to_json(),
           "diagnostics": {k: _finite_or_none(v) for k, v in diag.items()}}
    check_schema(out, "scenario")
    if args.format == "csv":
        _emit(args, _scenarios_csv([sc]))
    else:
        _emit(args, dumps(out))
    print(f"fitted mu={ms.mu:.4f} sigma={ms.sigma:.4f} impact={sc.impact:.4%}", file=sys.stderr)
    return EXIT_OK


def _scenarios_csv(scenarios: Sequence[AttackScenario]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "mu", "sigma", "impact"])
    for sc in scenarios:
        w.writerow([sc.name, repr(sc.meta.mu), repr(sc.meta.sigma), repr(sc.impact)])
    return buf.getvalue()


def cmd_impact(args) -> int:
    if args.mu is not None or args.sigma is not None or args.scenario:
        scenarios = [_scenario_arg(args)]
    else:
        scenarios = list(_registry(args))
    if args.format == "csv":
        _emit(args, _scenarios_csv(scenarios))
    else:
        out = {"schema": "metaspoof.scenarios/1", "scenarios": [sc.to_json() for sc in scenarios]}
        check_schema(out, "scenario")
        _emit(args, dumps(out))
    for sc in scenarios:
        print(f"{sc.name}: impact {sc.impact:.4%}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.scores:
        if args.genuine or args.impostor:
            raise ValidationError("--scores conflicts with --genuine/--impostor pools")
        ds = read_scores_csv(args.scores)
        if not args.attack:
            raise ValidationError("dataset mode needs at least one --attack MATCHER=SCENARIO")
        combo = [0] * ds.n_matchers
        per: dict[int, AttackScenario] = {}
        for item in args.attack:
            idx, _, name = item.partition("=")
            try:
                i = int(idx)
            except ValueError:
                raise ValidationError(f"bad --attack {item!r}; expected MATCHER=SCENARIO") from None
            if not 0 <= i < ds.n_matchers:
                raise ValidationError(f"--attack matcher {i} outside 0..{ds.n_matchers - 1}")
            combo[i] = 1
            per[i] = resolve_scenario(name, _registry(args))
        plan = SpoofPlan(tuple(combo), per)
        _emit(args, format_scores_csv(spoof_dataset(ds, plan, seed)))
        if args.out:
            Path(str(args.out) + ".plan.json").write_text(
                dumps({**plan.to_json(), "seed": seed}), encoding="utf-8")
        print(f"spoofed {int((~ds.genuine).sum())} impostor rows, plan {combo}", file=sys.stderr)
        return EXIT_OK
    if not (args.genuine and args.impostor):
        raise ValidationError("pool mode needs --genuine and --impostor score files")
    sc = _scenario_arg(args)
    g, i = read_score_list(args.genuine), read_score_list(args.impostor)
    n = args.n if args.n is not None else i.size
    fakes = sample_fake_scores(g, i, sc.meta, n, (seed, "simulate"))
    if args.format == "json":
        _emit(args, dumps({"scenario": sc.to_json(), "seed": seed,
                           "fakes": [float(v) for v in fakes]}))
    else:
        _emit(args, "".join(f"{float(v)!r}\n" for v in fakes))
    print(f"simulated {n} fake scores under {sc.name}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    if args.rule not in RULES:
        raise ValidationError(f"unknown rule {args.rule!r}; supported rules: {list(RULES)}")
    cfg = _config(args)
    ds = read_scores_csv(args.scores)
    mm = fit_minmax(ds)
    model, info = train_rule(args.rule, mm.apply(ds, clip=False), cfg, cfg.seed)
    out = {"schema": "metaspoof.model/1", "rule": args.rule,
           "normalization": {"low": mm.low.tolist(), "high": mm.high.tolist()},
           "hyperparams": info, "model": model.to_json()}
    check_schema(out, "model")
    _emit(args, dumps(out))
    print(f"trained {args.rule} on {len(ds)} samples", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    report = evaluate_security(cfg, jobs=args.jobs)
    check_schema(report, "report")
    _emit(args, table_csv(report) if args.format == "csv" else dumps(report))
    best = min(report["rules"], key=lambda r: report["rules"][r]["mean"]["gfar"])
    print(f"evaluated {len(cfg.rules)} rule(s) over {report['meta']['n_runs']} run(s);"
          f" lowest GFAR: {best}", file=sys.stderr)
    return EXIT_OK


def _bands_csv(out: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule", "matcher", "frr", "far", "lower", "upper", "bucket"])
    for entry in out["bands"]:
        b = entry["band"]
        for bucket in b["buckets"]:
            for f, v, lo, hi in zip(b["frr"], bucket["far"], b["lower"], b["upper"]):
                w.writerow([entry["rule"], entry["matcher"], repr(f), repr(v), repr(lo), repr(hi),
                            bucket["impact"]])
    return buf.getvalue()


def cmd_bands(args) -> int:
    cfg = _config(args)
    out = compute_bands(cfg, registry=_registry(args), registry_only=args.registry_only,
                        verify=args.verify)
    check_schema(out, "bands")
    _emit(args, _bands_csv(out) if args.format == "csv" else dumps(out))
    for w in out["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    if args.verify:
        failed = [(e["rule"], e["matcher"], name) for e in out["bands"]
                  for name, ok in e.get("containment", {}).items() if not ok]
        for rule, i, name in failed:
            print(f"containment failed: rule {rule}, matcher {i}, scenario {name}", file=sys.stderr)
        if failed:
            raise NumericError(f"{len(failed)} reference curve(s) leave the band")
    return EXIT_OK


def cmd_select(args) -> int:
    reports = [_load_json(p) for p in args.reports]
    for p, rep in zip(args.reports, reports):
        try:
            check_schema(rep, "report")
        except ValidationError as exc:
            raise ValidationError(f"{p}: {exc}") from None
    frr_max = DEFAULT_FRR_MAX if args.frr_max is None else args.frr_max
    for p, rep in zip(args.reports, reports):
        if abs(rep["meta"]["frr_max"] - frr_max) > 1e-12:
            raise ValidationError(f"{p} was evaluated at FRR {rep['meta']['frr_max']}, not {frr_max}")
    prior = MixturePrior.from_json(_load_json(args.prior) if args.prior
                                   else reports[0]["meta"]["prior"])
    sel = select_rule(reports, prior, frr_max)
    out = sel.to_json()
    check_schema(out, "selection")
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rule", "frr", "far", "gfar", "feasible"])
        for r in sel.ranking:
            w.writerow([r["rule"], repr(r["frr"]), repr(r["far"]), repr(r["gfar"]), r["feasible"]])
        _emit(args, buf.getvalue())
    else:
        _emit(args, dumps(out))
    print(f"selected {sel.selected}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.config:
        obj = _load_json(args.config)
        if "synthetic" in obj:
            obj = obj["synthetic"] or {}
        spec = SyntheticSpec.from_json(obj)
    else:
        spec = SyntheticSpec()
    if args.clients is not None:
        spec = dataclasses.replace(spec, n_clients=args.clients)
    if args.matcher is not None:
        if not 0 <= args.matcher < len(spec.matchers):
            raise ValidationError(f"--matcher outside 0..{len(spec.matchers) - 1}")
        spec = spec.unimodal(args.matcher)
    ds = synth_scores(spec, seed, args.prefix)
    _emit(args, format_scores_csv(ds))
    print(f"synthesized {len(ds)} samples over {ds.n_matchers} matcher(s)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"master seed (default {DEFAULT_SEED}, or the config's)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="output format (default json; csv for simulate)")
    common.add_argument("--frr-max", type=float, default=None,
                        help=f"maximum admissible FRR (default {DEFAULT_FRR_MAX})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="metaspoof", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp):
        sp.add_argument("--scenario", help="registry name, e.g. face-high")
        sp.add_argument("--mu", type=float)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--name")
        sp.add_argument("--registry", help="extra scenario JSON file")

    sp = sub.add_parser("fit", parents=[common], help="fit (mu, sigma) from score pools")
    sp.add_argument("--genuine", required=True)
    sp.add_argument("--impostor", required=True)
    sp.add_argument("--fake", required=True)
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sp.add_argument("--name")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("impact", parents=[common], help="attack impact of scenarios")
    scenario_flags(sp)
    sp.set_defaults(func=cmd_impact)

    sp = sub.add_parser("simulate", parents=[common], help="simulate fake scores")
    scenario_flags(sp)
    sp.add_argument("--genuine")
    sp.add_argument("--impostor")
    sp.add_argument("-n", type=int, default=None, help="number of fakes (default: impostor count)")
    sp.add_argument("--scores", help="rewrite impostor rows of this score CSV")
    sp.add_argument("--attack", action="append", metavar="MATCHER=SCENARIO")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", parents=[common], help="train one fusion rule")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--rule", required=True)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "security evaluation report"),
                                 ("bands", cmd_bands, "impact-bucketed uncertainty bands")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("config", nargs="?", help="experiment config JSON")
        sp.add_argument("--synthetic", action="store_true", help="use synthetic scores")
        sp.add_argument("--scores", help="multimodal score CSV")
        sp.add_argument("--set-a", help="unimodal score CSV (chimerical pairing)")
        sp.add_argument("--set-b", help="unimodal score CSV (chimerical pairing)")
        sp.add_argument("--grid-n", type=int, default=None, help="uncertainty grid size")
        sp.set_defaults(func=func)
        if name == "bands":
            sp.add_argument("--registry-only", action="store_true")
            sp.add_argument("--verify", action="store_true",
                            help="check that registry and limit curves lie in the band")
            sp.add_argument("--registry", help="extra scenario JSON file")

    sp = sub.add_parser("select", parents=[common], help="pick the rule with least GFAR")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--prior", help="prior JSON (default: the first report's)")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("synth", parents=[common], help="synthetic score CSV")
    sp.add_argument("--config", help="synthetic spec, or a config holding one")
    sp.add_argument("--clients", type=int)
    sp.add_argument("--matcher", type=int, help="emit a single matcher's scores")
    sp.add_argument("--prefix", default="c", help="client id prefix")
    sp.set_defaults(func=cmd_synth)
    return p


def _fail(kind: str, code: int, exc: BaseException, command: str | None) -> int:
    sys.stdout.write(dumps({"error": {"type": kind, "message": str(exc), "command": command,
                                      "exit_code": code}}))
    print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.format is None:
        args.format = "csv" if args.command == "simulate" else "json"
    try:
        return args.func(args)
    except ValidationError as exc:
        return _fail("validation", EXIT_INVALID, exc, args.command)
    except (OSError, KeyError) as exc:
        return _fail("validation", EXIT_INVALID, exc, args.command)
    except (NumericError, FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        return _fail("numeric", EXIT_NUMERIC, exc, args.command)


if __name__ == "__main__":
    sys.exit(main())
