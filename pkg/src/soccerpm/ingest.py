"""Parsing and validation of the canonical match and shot feeds.

Both feeds are JSON Lines.  Parsing is strict by default: the first bad line
raises an :class:`~soccerpm.errors.IngestError` carrying its line number.
Passing an ``errors`` list switches to lenient mode, where bad lines are
skipped and their errors appended to the list instead.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import math
from typing import IO, Iterable, Iterator

from .errors import (
    DuplicateMatch,
    EmptyLeague,
    InconsistentLineup,
    IngestError,
    MalformedLine,
    OutOfRangeCoordinate,
    SchemaViolation,
    UnknownMatch,
)

logger = logging.getLogger(__name__)

SIDES = ("home", "away")
EVENT_KINDS = ("goal", "substitution", "redCard")
SHOT_TYPES = ("penalty", "freekick", "header", "openplay")
SHOT_OUTCOMES = ("goal", "noGoal")
GK_SKILLS = ("diving", "handling", "kicking", "positioning", "reflexes")
LINEUP_SIZE = 11

# outcome category codes, ordered for the probit model
AWAY_WIN, DRAW, HOME_WIN = 0, 1, 2

_MATCH_FIELDS = {
    "matchId", "date", "competitionId", "season", "homeTeam", "awayTeam",
    "homeLineup", "awayLineup", "terminalMinute", "events",
}
_EVENT_FIELDS = {"minute", "side", "kind", "player", "playerOn"}
_SHOT_FIELDS = {
    "matchId", "minute", "side", "shooter", "x", "y", "shotType",
    "bigChance", "gkSkills", "outcome",
}


@dataclasses.dataclass(frozen=True)
class PlayerRef:
    player_id: str
    display_name: str | None = None


@dataclasses.dataclass(frozen=True)
class EventRecord:
    minute: float
    side: str
    kind: str
    player: str
    player_on: str | None = None


@dataclasses.dataclass(frozen=True)
class MatchRecord:
    match_id: str
    date: dt.date
    competition_id: str
    season: str
    home_team: str
    away_team: str
    home_lineup: tuple[str, ...]
    away_lineup: tuple[str, ...]
    terminal_minute: float
    events: tuple[EventRecord, ...]

    @property
    def score(self) -> tuple[int, int]:
        home = sum(1 for e in self.events if e.kind == "goal" and e.side == "home")
        away = sum(1 for e in self.events if e.kind == "goal" and e.side == "away")
        return home, away

    @property
    def result(self) -> int:
        """Outcome category: AWAY_WIN, DRAW or HOME_WIN."""
        home, away = self.score
        if home > away:
            return HOME_WIN
        if home < away:
            return AWAY_WIN
        return DRAW

    def lineup(self, side: str) -> tuple[str, ...]:
        return self.home_lineup if side == "home" else self.away_lineup


@dataclasses.dataclass(frozen=True)
class ShotRecord:
    match_id: str
    minute: float
    side: str
    shooter: str
    x: float
    y: float
    shot_type: str
    big_chance: bool
    outcome: str
    gk_skills: tuple[float, ...] | None = None

    @property
    def is_goal(self) -> bool:
        return self.outcome == "goal"


@dataclasses.dataclass
class Dataset:
    """Validated matches and shots plus derived league metadata."""

    matches: dict[str, MatchRecord]
    shots: list[ShotRecord]
    leagues: list[str]
    initial_outcome_freqs: dict[str, tuple[float, float, float]]
    players: dict[str, PlayerRef]

    def shots_by_match(self) -> dict[str, list[ShotRecord]]:
        out: dict[str, list[ShotRecord]] = {m: [] for m in self.matches}
        for shot in self.shots:
            out[shot.match_id].append(shot)
        return out


# --------------------------------------------------------------------------
# field helpers


def _decode(raw: str, line_no: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise MalformedLine("record is not a JSON object", line_no)
    return obj


def _lines(stream: Iterable[str] | IO[str]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(stream, start=1):
        if raw.strip():
            yield line_no, raw


def _warn_unknown(obj: dict, known: set[str], where: str, seen: set[str]) -> None:
    for key in obj:
        if key not in known and (where, key) not in seen:
            seen.add((where, key))
            logger.warning("ignoring unknown %s field %r", where, key)


def _require(obj: dict, field: str, line_no: int):
    if field not in obj or obj[field] is None:
        raise SchemaViolation(field, "missing", line_no)
    return obj[field]


def _str(obj: dict, field: str, line_no: int) -> str:
    value = _require(obj, field, line_no)
    if not isinstance(value, str) or not value:
        raise SchemaViolation(field, "expected non-empty string", line_no)
    return value


def _num(obj: dict, field: str, line_no: int) -> float:
    value = _require(obj, field, line_no)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaViolation(field, "expected finite number", line_no)
    return float(value)


def _choice(obj: dict, field: str, options: tuple[str, ...], line_no: int) -> str:
    value = _require(obj, field, line_no)
    if value not in options:
        raise SchemaViolation(field, f"expected one of {options}, got {value!r}", line_no)
    return value


def _player(value, field: str, line_no: int, names: dict[str, str | None]) -> str:
    """Player entries are either an id string or ``{"id": ..., "name": ...}``."""
    if isinstance(value, dict):
        pid = value.get("id")
        name = value.get("name")
    else:
        pid, name = value, None
    if not isinstance(pid, str) or not pid:
        raise SchemaViolation(field, "player id must be a non-empty string", line_no)
    if name is not None and not isinstance(name, str):
        raise SchemaViolation(field, "player name must be a string", line_no)
    if name is not None or pid not in names:
        names[pid] = name if name is not None else names.get(pid)
    return pid


# --------------------------------------------------------------------------
# matches


def _check_lineups(match: MatchRecord, line_no: int) -> None:
    mid = match.match_id
    for side in SIDES:
        lineup = match.lineup(side)
        if len(lineup) != LINEUP_SIZE:
            raise InconsistentLineup(mid, f"{side} lineup has {len(lineup)} players", line_no)
        if len(set(lineup)) != LINEUP_SIZE:
            raise InconsistentLineup(mid, f"{side} lineup has duplicate players", line_no)
    if set(match.home_lineup) & set(match.away_lineup):
        raise InconsistentLineup(mid, "player listed in both lineups", line_no)

    on_pitch = {s: set(match.lineup(s)) for s in SIDES}
    squad = {s: set(match.lineup(s)) for s in SIDES}
    used: set[str] = set(match.home_lineup) | set(match.away_lineup)
    for ev in match.events:
        other = "away" if ev.side == "home" else "home"
        if ev.kind == "substitution":
            if ev.player not in on_pitch[ev.side]:
                raise InconsistentLineup(
                    mid, f"substitution at {ev.minute} removes {ev.player} who is not on the pitch", line_no)
            if ev.player_on in used:
                raise InconsistentLineup(
                    mid, f"substitution at {ev.minute} brings on {ev.player_on} who already played", line_no)
            if ev.player_on in squad[other]:
                raise InconsistentLineup(mid, f"{ev.player_on} appears for both teams", line_no)
            on_pitch[ev.side].discard(ev.player)
            on_pitch[ev.side].add(ev.player_on)
            squad[ev.side].add(ev.player_on)
            used.add(ev.player_on)
        elif ev.kind == "redCard":
            if ev.player not in on_pitch[ev.side]:
                raise InconsistentLineup(
                    mid, f"red card at {ev.minute} for {ev.player} who is not on the pitch", line_no)
            on_pitch[ev.side].discard(ev.player)


def _parse_event(obj, line_no: int, terminal: float, names: dict) -> EventRecord:
    if not isinstance(obj, dict):
        raise SchemaViolation("events", "event is not an object", line_no)
    minute = _num(obj, "minute", line_no)
    if not 0.0 <= minute <= terminal:
        raise SchemaViolation("events.minute", f"{minute} outside [0, {terminal}]", line_no)
    side = _choice(obj, "side", SIDES, line_no)
    kind = _choice(obj, "kind", EVENT_KINDS, line_no)
    player = _player(_require(obj, "player", line_no), "events.player", line_no, names)
    player_on = None
    if kind == "substitution":
        player_on = _player(_require(obj, "playerOn", line_no), "events.playerOn", line_no, names)
    elif obj.get("playerOn") is not None:
        raise SchemaViolation("events.playerOn", f"not allowed for kind {kind!r}", line_no)
    return EventRecord(minute, side, kind, player, player_on)


def _parse_match(obj: dict, line_no: int, names: dict, seen: set) -> MatchRecord:
    _warn_unknown(obj, _MATCH_FIELDS, "match", seen)
    match_id = _str(obj, "matchId", line_no)
    try:
        date = dt.date.fromisoformat(_str(obj, "date", line_no)[:10])
    except ValueError:
        raise SchemaViolation("date", "expected ISO-8601 date", line_no) from None
    terminal = _num(obj, "terminalMinute", line_no)
    if terminal < 90.0:
        raise SchemaViolation("terminalMinute", f"{terminal} < 90", line_no)
    lineups = {}
    for field in ("homeLineup", "awayLineup"):
        raw = _require(obj, field, line_no)
        if not isinstance(raw, list):
            raise SchemaViolation(field, "expected array", line_no)
        lineups[field] = tuple(_player(p, field, line_no, names) for p in raw)
    raw_events = _require(obj, "events", line_no)
    if not isinstance(raw_events, list):
        raise SchemaViolation("events", "expected array", line_no)
    events = [_parse_event(e, line_no, terminal, names) for e in raw_events]
    for e in raw_events:
        if isinstance(e, dict):
            _warn_unknown(e, _EVENT_FIELDS, "event", seen)
    # stable: same-minute events keep feed order
    events.sort(key=lambda e: e.minute)
    match = MatchRecord(
        match_id=match_id,
        date=date,
        competition_id=_str(obj, "competitionId", line_no),
        season=_str(obj, "season", line_no),
        home_team=_str(obj, "homeTeam", line_no),
        away_team=_str(obj, "awayTeam", line_no),
        home_lineup=lineups["homeLineup"],
        away_lineup=lineups["awayLineup"],
        terminal_minute=terminal,
        events=tuple(events),
    )
    _check_lineups(match, line_no)
    return match


def parse_matches(
    stream: Iterable[str] | IO[str],
    errors: list[IngestError] | None = None,
    names: dict[str, str | None] | None = None,
) -> list[MatchRecord]:
    """Parse a matches.jsonl stream.

    ``names`` (optional) is filled with ``playerId -> displayName``.
    """
    names = {} if names is None else names
    out: list[MatchRecord] = []
    ids: set[str] = set()
    seen: set = set()
    for line_no, raw in _lines(stream):
        try:
            match = _parse_match(_decode(raw, line_no), line_no, names, seen)
            if match.match_id in ids:
                raise DuplicateMatch(f"duplicate matchId {match.match_id!r}", line_no)
        except IngestError as exc:
            if errors is None:
                raise
            errors.append(exc)
            continue
        ids.add(match.match_id)
        out.append(match)
    return out


# --------------------------------------------------------------------------
# shots


def _parse_shot(obj: dict, line_no: int, matches: dict[str, MatchRecord], seen: set) -> ShotRecord:
    _warn_unknown(obj, _SHOT_FIELDS, "shot", seen)
    match_id = _str(obj, "matchId", line_no)
    if match_id not in matches:
        raise UnknownMatch(f"shot references unknown match {match_id!r}", line_no)
    match = matches[match_id]
    minute = _num(obj, "minute", line_no)
    if not 0.0 <= minute <= match.terminal_minute:
        raise SchemaViolation("minute", f"{minute} outside [0, {match.terminal_minute}]", line_no)
    coords = {}
    for field in ("x", "y"):
        value = _num(obj, field, line_no)
        if not 0.0 <= value <= 1.0:
            raise OutOfRangeCoordinate(field, value, line_no)
        coords[field] = value
    big = _require(obj, "bigChance", line_no)
    if not isinstance(big, bool):
        raise SchemaViolation("bigChance", "expected boolean", line_no)
    gk = obj.get("gkSkills")
    if gk is not None:
        if not isinstance(gk, list) or len(gk) != len(GK_SKILLS):
            raise SchemaViolation("gkSkills", f"expected array of {len(GK_SKILLS)}", line_no)
        for v in gk:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise OutOfRangeCoordinate("gkSkills", v, line_no)
        gk = tuple(float(v) for v in gk)
    shooter = _player(_require(obj, "shooter", line_no), "shooter", line_no, {})
    return ShotRecord(
        match_id=match_id,
        minute=minute,
        side=_choice(obj, "side", SIDES, line_no),
        shooter=shooter,
        x=coords["x"],
        y=coords["y"],
        shot_type=_choice(obj, "shotType", SHOT_TYPES, line_no),
        big_chance=big,
        outcome=_choice(obj, "outcome", SHOT_OUTCOMES, line_no),
        gk_skills=gk,
    )


def parse_shots(
    stream: Iterable[str] | IO[str],
    matches: dict[str, MatchRecord] | Dataset,
    errors: list[IngestError] | None = None,
) -> list[ShotRecord]:
    """Parse a shots.jsonl stream, linking each shot to an already-loaded match."""
    if isinstance(matches, Dataset):
        matches = matches.matches
    out: list[ShotRecord] = []
    seen: set = set()
    for line_no, raw in _lines(stream):
        try:
            shot = _parse_shot(_decode(raw, line_no), line_no, matches, seen)
        except IngestError as exc:
            if errors is None:
                raise
            errors.append(exc)
            continue
        out.append(shot)
    return out


# --------------------------------------------------------------------------
# dataset


def empirical_initial_freqs(matches: Iterable[MatchRecord], league: str) -> tuple[float, float, float]:
    """Home-win, draw and away-win frequencies of the league's matches."""
    counts = [0, 0, 0]
    for m in matches:
        if m.competition_id == league:
            counts[m.result] += 1
    n = sum(counts)
    if n == 0:
        raise EmptyLeague(f"no matches in league {league!r}")
    return counts[HOME_WIN] / n, counts[DRAW] / n, counts[AWAY_WIN] / n


def build_dataset(
    matches: list[MatchRecord],
    shots: list[ShotRecord] | None = None,
    names: dict[str, str | None] | None = None,
) -> Dataset:
    names = names or {}
    by_id = {m.match_id: m for m in matches}
    if len(by_id) != len(matches):
        raise DuplicateMatch("duplicate matchId in match list")
    shots = list(shots or [])
    for s in shots:
        if s.match_id not in by_id:
            raise UnknownMatch(f"shot references unknown match {s.match_id!r}")
    leagues = sorted({m.competition_id for m in matches})
    freqs = {lg: empirical_initial_freqs(matches, lg) for lg in leagues}
    players: dict[str, PlayerRef] = {}
    for m in matches:
        for pid in (*m.home_lineup, *m.away_lineup):
            players.setdefault(pid, PlayerRef(pid, names.get(pid)))
        for e in m.events:
            if e.player_on is not None:
                players.setdefault(e.player_on, PlayerRef(e.player_on, names.get(e.player_on)))
    return Dataset(by_id, shots, leagues, freqs, players)


def load_dataset(
    matches_path,
    shots_path=None,
    errors: list[IngestError] | None = None,
) -> Dataset:
    names: dict[str, str | None] = {}
    with open(matches_path, encoding="utf-8") as fh:
        matches = parse_matches(fh, errors=errors, names=names)
    shots: list[ShotRecord] = []
    if shots_path is not None:
        by_id = {m.match_id: m for m in matches}
        with open(shots_path, encoding="utf-8") as fh:
            shots = parse_shots(fh, by_id, errors=errors)
    return build_dataset(matches, shots, names)


# --------------------------------------------------------------------------
# serialization (canonical form, used for round trips and synthetic feeds)


def _player_out(pid: str, names: dict | None):
    name = (names or {}).get(pid)
    return {"id": pid, "name": name} if name else pid


def match_to_dict(match: MatchRecord, names: dict | None = None) -> dict:
    events = []
    for e in match.events:
        ev = {"minute": e.minute, "side": e.side, "kind": e.kind, "player": _player_out(e.player, names)}
        if e.player_on is not None:
            ev["playerOn"] = _player_out(e.player_on, names)
        events.append(ev)
    return {
        "matchId": match.match_id,
        "date": match.date.isoformat(),
        "competitionId": match.competition_id,
        "season": match.season,
        "homeTeam": match.home_team,
        "awayTeam": match.away_team,
        "homeLineup": [_player_out(p, names) for p in match.home_lineup],
        "awayLineup": [_player_out(p, names) for p in match.away_lineup],
        "terminalMinute": match.terminal_minute,
        "events": events,
    }


def shot_to_dict(shot: ShotRecord) -> dict:
    out = {
        "matchId": shot.match_id,
        "minute": shot.minute,
        "side": shot.side,
        "shooter": shot.shooter,
        "x": shot.x,
        "y": shot.y,
        "shotType": shot.shot_type,
        "bigChance": shot.big_chance,
        "outcome": shot.outcome,
    }
    if shot.gk_skills is not None:
        out["gkSkills"] = list(shot.gk_skills)
    return out


def dump_jsonl(records: Iterable[dict], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
