"""Turn a validated dataset into segment observations with all three targets."""

from __future__ import annotations

import json
from typing import IO, Iterable, Sequence

from .ingest import Dataset
from .inplay import HazardSet, xp_target
from .segmentation import AdaptationLedger, SegmentObservation, build_segments, goal_differential_per90, league_balance
from .xg import XgModelSet, segment_xg_differential


def build_observations(
    dataset: Dataset,
    xg_models: XgModelSet | None = None,
    hazards: HazardSet | None = None,
    ledger: AdaptationLedger | None = None,
) -> list[SegmentObservation]:
    """Segments of every match in (date, matchId) order.

    Missing models leave the corresponding target at 0.
    """
    ledger = ledger if ledger is not None else AdaptationLedger(dataset.matches.values())
    shots = dataset.shots_by_match()
    leagues = dataset.leagues
    out = []
    for match in sorted(dataset.matches.values(), key=lambda m: (m.date, m.match_id)):
        scored = []
        if xg_models is not None:
            scored = [(s.minute, s.side, xg_models.predict_shot(s, match)) for s in shots[match.match_id]]
        hazard = hazards.for_league(match.competition_id) if hazards is not None else None
        for seg in build_segments(match):
            y_xg = segment_xg_differential(seg, [(side, p) for minute, side, p in scored if seg.contains(minute)])
            y_xp = 0.0
            if hazard is not None:
                y_xp = xp_target(hazard, seg, dataset.initial_outcome_freqs[match.competition_id])
            out.append(SegmentObservation(
                seg, goal_differential_per90(seg), y_xg, y_xp, 1.0,
                league_balance(seg, ledger, leagues),
            ))
    return out


def dump_observations(observations: Iterable[SegmentObservation], leagues: Sequence[str], fh: IO[str]) -> None:
    for obs in observations:
        fh.write(json.dumps(obs.to_dict(leagues), sort_keys=True, separators=(",", ":")) + "\n")


def load_observations(fh: IO[str]) -> tuple[list[SegmentObservation], list[str]]:
    rows = [json.loads(line) for line in fh if line.strip()]
    leagues = sorted({lg for r in rows for lg in r.get("mLeague", {})} | {r["leagueId"] for r in rows})
    return [SegmentObservation.from_dict(r, leagues) for r in rows], leagues
