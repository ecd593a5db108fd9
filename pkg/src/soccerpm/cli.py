"""Command-line pipeline: validate, segment, fit, rate, tune and report."""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
from typing import Sequence

from . import __version__
from .artifacts import RunDirectory, versions
from .config import PipelineConfig, build_config, parse_grid
from .corpus import build_observations, dump_observations, load_observations
from .errors import ConfigError, SoccerPMError
from .evaluate import brier_score, league_strengths, month_starts, rating_series, top_players, tune_hyperparameters
from .ingest import load_dataset
from .inplay import HazardSet, fit_hazard_set
from .ridge import RatingCorpus, ratings_as_of
from .segmentation import minutes_by_year
from .xg import PitchGeometry, XgModelSet, fit_xg_models

logger = logging.getLogger("soccerpm")

# flag dest -> config key
_CONFIG_FLAGS = {
    "matches": "matches", "shots": "shots", "segments": "segments", "xg_model": "xg_model",
    "hazards": "hazards", "out": "out", "seed": "seed", "jobs": "jobs", "lam": "lam", "zeta": "zeta",
    "grid": "grid", "folds": "folds", "repeats": "repeats", "window_years": "window_years",
    "min_minutes": "min_minutes", "horizon": "horizon", "burn_in_days": "burn_in_days",
}


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _require(cfg: PipelineConfig, key: str) -> str:
    value = getattr(cfg, key)
    if not value:
        raise ConfigError(f"--{key.replace('_', '-')} is required for this command")
    if not os.path.exists(value):
        raise ConfigError(f"{key}: path {value!r} does not exist")
    return value


def _optional_path(cfg: PipelineConfig, key: str) -> str | None:
    value = getattr(cfg, key)
    if value and not os.path.exists(value):
        raise ConfigError(f"{key}: path {value!r} does not exist")
    return value or None


def _pitch(cfg: PipelineConfig) -> PitchGeometry:
    return PitchGeometry(cfg.pitch_length, cfg.pitch_width, cfg.goal_width)


def _dataset(cfg: PipelineConfig, errors=None):
    return load_dataset(_require(cfg, "matches"), _optional_path(cfg, "shots"), errors)


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _observations(cfg: PipelineConfig, dataset=None):
    seg = _optional_path(cfg, "segments")
    if seg:
        with open(seg, encoding="utf-8") as fh:
            return load_observations(fh)
    dataset = dataset or _dataset(cfg)
    xg_path, hz_path = _optional_path(cfg, "xg_model"), _optional_path(cfg, "hazards")
    xg = XgModelSet.from_dict(_read_json(xg_path)) if xg_path else None
    hz = HazardSet.from_dict(_read_json(hz_path)) if hz_path else None
    return build_observations(dataset, xg, hz), dataset.leagues


def _corpus(cfg: PipelineConfig, dataset=None) -> RatingCorpus:
    obs, leagues = _observations(cfg, dataset)
    return RatingCorpus(obs, leagues=leagues)


def _end_date(corpus: RatingCorpus) -> dt.date:
    return dt.date.fromordinal(int(corpus.day.max()) + 1)


# --------------------------------------------------------------------------
# commands


def cmd_validate(cfg, args, run: RunDirectory) -> dict:
    errors = [] if args.lenient else None
    ds = _dataset(cfg, errors)
    summary = {
        "matches": len(ds.matches),
        "shots": len(ds.shots),
        "shotGoals": sum(1 for s in ds.shots if s.is_goal),
        "matchGoals": sum(sum(m.score) for m in ds.matches.values()),
        "players": len(ds.players),
        "leagues": ds.leagues,
        "initialOutcomeFreqs": {lg: list(v) for lg, v in ds.initial_outcome_freqs.items()},
        "errors": [e.to_dict() for e in (errors or [])],
    }
    run.write_json("summary.json", summary)
    return summary


def cmd_segment(cfg, args, run):
    ds = _dataset(cfg)
    obs, leagues = _observations(dataclasses.replace(cfg, segments=None), ds)
    buf = io.StringIO()
    dump_observations(obs, leagues, buf)
    run.write_text("segments.jsonl", buf.getvalue())
    return {"segments": len(obs), "leagues": leagues}


def cmd_fit_xg(cfg, args, run):
    ds = _dataset(cfg)
    models = fit_xg_models(ds, cfg.xg_folds, cfg.seed, _pitch(cfg))
    run.write_json("xgmodel.json", models.to_dict())
    return {"models": len(models.models), "shots": len(ds.shots)}


def cmd_fit_inplay(cfg, args, run):
    ds = _dataset(cfg)
    hz = fit_hazard_set(list(ds.matches.values()), cfg.min_league_matches, cfg.horizon, cfg.step)
    run.write_json("hazards.json", hz.to_dict())
    return {"leagueModels": sorted(hz.models), "matches": len(ds.matches)}


def cmd_rate(cfg, args, run):
    corpus = _corpus(cfg)
    as_of = args.as_of or _end_date(corpus)
    sol = ratings_as_of(corpus, as_of, cfg.lam, cfg.zeta, cfg.window_years)
    run.write_json("ratings.json", sol.to_dict())
    return {"ratingDate": as_of.isoformat(), "players": len(sol.targets["pm"].players), "segments": sol.n_segments}


def cmd_tune(cfg, args, run):
    ds = _dataset(cfg)
    corpus = _corpus(cfg, ds)
    report = tune_hyperparameters(corpus, ds.matches.values(), parse_grid(cfg.grid), cfg.folds, cfg.repeats,
                                  cfg.seed, cfg.window_years, cfg.burn_in_days, jobs=cfg.jobs)
    run.write_json("cvreport.json", report.to_dict())
    return {"gridPoints": len(report.grid), "selected": report.to_dict()["selected"]}


def cmd_evaluate(cfg, args, run):
    ds = _dataset(cfg)
    corpus = _corpus(cfg, ds)
    report = tune_hyperparameters(corpus, ds.matches.values(), [(cfg.lam, cfg.zeta)], cfg.folds, cfg.repeats,
                                  cfg.seed, cfg.window_years, cfg.burn_in_days, jobs=cfg.jobs)
    point = report.selected
    outcomes = [m.result for m in ds.matches.values()]
    counts = [outcomes.count(k) / len(outcomes) for k in range(3)]
    payload = {
        "lambda": cfg.lam,
        "zeta": cfg.zeta,
        "meanBrier": point.mean_brier,
        "sdBrier": point.sd_brier,
        "scores": list(point.scores),
        "frequencyBaselineBrier": brier_score([counts] * len(outcomes), outcomes),
        "folds": cfg.folds,
        "repeats": cfg.repeats,
    }
    run.write_json("evaluation.json", payload)
    return {"meanBrier": point.mean_brier, "sdBrier": point.sd_brier}


def cmd_top_players(cfg, args, run):
    corpus = _corpus(cfg)
    minutes = minutes_by_year(o.segment for o in corpus.observations)
    years = args.years or sorted(minutes)
    solutions = {}
    for y in years:
        try:
            solutions[y] = ratings_as_of(corpus, dt.date(y, 12, 31), cfg.lam, cfg.zeta, cfg.window_years)
        except SoccerPMError:
            logger.warning("no ratings for %d", y)
    names = {}
    if cfg.matches and os.path.exists(cfg.matches):
        names = {p.player_id: p.display_name for p in _dataset(cfg).players.values()}
    board = top_players(solutions, minutes, cfg.min_minutes, names, args.top)
    run.write_csv("board.csv", ["year", "rank", "playerId", "name", "score"],
                  [(e.year, e.rank, e.player_id, e.name or "", e.score) for e in board.entries])
    return {"years": sorted(solutions), "rows": len(board.entries)}


def cmd_league_strength(cfg, args, run):
    corpus = _corpus(cfg)
    sol = ratings_as_of(corpus, args.as_of or _end_date(corpus), cfg.lam, cfg.zeta, cfg.window_years)
    rows = league_strengths(sol)
    targets = list(sol.targets)
    run.write_csv("leagues.csv", ["league", *targets, "mean"],
                  [(r.league, *(r.scores[t] for t in targets), r.mean) for r in rows])
    return {"leagues": [r.league for r in rows]}


def cmd_series(cfg, args, run):
    corpus = _corpus(cfg)
    if args.dates:
        dates = args.dates
    else:
        start = args.start or dt.date.fromordinal(int(corpus.day.min()))
        end = args.end or _end_date(corpus)
        dates = [d for d in month_starts(start, end) if start <= d <= end]
    series = rating_series(args.player, dates, corpus, cfg.lam, cfg.zeta, cfg.window_years)
    run.write_csv("series.csv", ["date", "pm", "xgpm", "xppm"],
                  [(d.isoformat(), v["pm"], v["xgpm"], v["xppm"]) for d, v in series])
    return {"player": args.player, "rows": len(series)}


def cmd_synthesize(cfg, args, run):
    from .synthetic import SyntheticConfig, generate
    fields = {f.name for f in dataclasses.fields(SyntheticConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in fields and v is not None and k != "seed"}
    corpus = generate(SyntheticConfig(seed=cfg.seed), **overrides)
    mpath, spath = corpus.write(run.path)
    for path in (mpath, spath, os.path.join(run.path, "planted.json")):
        with open(path, encoding="utf-8") as fh:
            run.written[os.path.basename(path)] = hashlib.sha256(fh.read().encode()).hexdigest()
    return {"matches": len(corpus.matches), "shots": len(corpus.shots)}


COMMANDS = {
    "validate": (cmd_validate, "parse and validate the match and shot feeds"),
    "segment": (cmd_segment, "split matches into constant-lineup segments with targets"),
    "fit-xg": (cmd_fit_xg, "fit the per-shot-type expected-goals specialists"),
    "fit-inplay": (cmd_fit_inplay, "fit the scoring-intensity model"),
    "rate": (cmd_rate, "solve the three ridge ratings as of a date"),
    "tune": (cmd_tune, "repeated k-fold search over (lambda, zeta)"),
    "evaluate": (cmd_evaluate, "cross-validated Brier score at one (lambda, zeta)"),
    "top-players": (cmd_top_players, "calendar-year player boards"),
    "league-strength": (cmd_league_strength, "normalized league effects"),
    "series": (cmd_series, "a player's ratings over time"),
    "synthesize": (cmd_synthesize, "write a synthetic corpus with planted strengths"),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel jobs (default: available cores)")
    p.add_argument("--out", help="run directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _data(p: argparse.ArgumentParser, matches=True, shots=False, models=False, segments=False) -> None:
    if matches:
        p.add_argument("--matches")
    if shots:
        p.add_argument("--shots")
    if models:
        p.add_argument("--xg-model", dest="xg_model")
        p.add_argument("--hazards")
    if segments:
        p.add_argument("--segments")


def _hyper(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--window-years", dest="window_years", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soccerpm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    ps = {}
    for name, (_, help_text) in COMMANDS.items():
        ps[name] = sub.add_parser(name, help=help_text)
        _common(ps[name])
    _data(ps["validate"], shots=True)
    ps["validate"].add_argument("--lenient", action="store_true", help="collect per-line errors instead of failing")
    _data(ps["segment"], shots=True, models=True)
    _data(ps["fit-xg"], shots=True)
    _data(ps["fit-inplay"])
    ps["fit-inplay"].add_argument("--horizon", type=float)
    for name in ("rate", "tune", "evaluate", "top-players", "league-strength", "series"):
        _data(ps[name], shots=True, models=True, segments=True)
        _hyper(ps[name])
    for name in ("tune", "evaluate"):
        ps[name].add_argument("--folds", type=int)
        ps[name].add_argument("--repeats", type=int)
        ps[name].add_argument("--burn-in-days", dest="burn_in_days", type=int)
    ps["tune"].add_argument("--grid", help="e.g. lambda=0.01:0.1:5,zeta=0:0.004:5 (log:a:b:n for log spacing)")
    for name in ("rate", "league-strength"):
        ps[name].add_argument("--as-of", dest="as_of", type=_date)
    ps["top-players"].add_argument("--years", type=lambda s: [int(v) for v in s.split(",")])
    ps["top-players"].add_argument("--top", type=int)
    ps["top-players"].add_argument("--min-minutes", dest="min_minutes", type=float)
    ps["series"].add_argument("--player", required=True)
    ps["series"].add_argument("--from", dest="start", type=_date)
    ps["series"].add_argument("--to", dest="end", type=_date)
    ps["series"].add_argument("--dates", type=lambda s: [_date(v) for v in s.split(",")])
    syn = ps["synthesize"]
    for flag in ("seasons", "teams", "squad", "leagues", "cup_matches"):
        syn.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
    for flag in ("team_sd", "player_sd", "drift_sd", "transfer_rate", "red_rate"):
        syn.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {_CONFIG_FLAGS[k]: v for k, v in vars(args).items() if k in _CONFIG_FLAGS}
        if overrides.get("jobs") is None and not args.config:
            overrides["jobs"] = os.cpu_count() or 1
        cfg = build_config(args.config, overrides)
        logger.info("soccerpm %s %s; seed %d; config %s", __version__, versions(), cfg.seed, cfg.hash())
        rundir = RunDirectory(cfg.out, args.command, cfg.hash(), cfg.seed)
        summary = COMMANDS[args.command][0](cfg, args, rundir)
        rundir.finalize()
    except SoccerPMError as exc:
        print(json.dumps({"status": "error", **exc.to_dict()}, sort_keys=True), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"status": "error", "error": "io_error", "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return 2
    print(json.dumps({"status": "ok", "command": args.command, **summary}, sort_keys=True, default=str))
    return 0


def main() -> None:
    sys.exit(run())
