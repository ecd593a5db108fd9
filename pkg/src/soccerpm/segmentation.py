"""Constant-lineup segments, dismissal dummies, time weights and league adaptation."""

from __future__ import annotations

import bisect
import calendar
import dataclasses
import datetime as dt
import math
from collections import defaultdict
from typing import Iterable, Sequence

from .errors import FutureSegment, UnknownPlayer, ZeroMinutes
from .ingest import MatchRecord

N_DISMISSAL = 3
HALF_WEEK_DAYS = 3.5
ADAPT_SEASON_GAMES = 6
ADAPT_LOOKBACK_MONTHS = 18


@dataclasses.dataclass(frozen=True)
class Segment:
    match_id: str
    date: dt.date
    league_id: str
    season: str
    start: float
    end: float
    home_on: tuple[str, ...]
    away_on: tuple[str, ...]
    goals_home: int
    goals_away: int
    dismissal: tuple[int, int, int]
    score_at_start: tuple[int, int]
    reds_at_start: tuple[int, int]

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def score_at_end(self) -> tuple[int, int]:
        return self.score_at_start[0] + self.goals_home, self.score_at_start[1] + self.goals_away

    def contains(self, minute: float) -> bool:
        """Half-open (start, end]; minute 0 belongs to a segment starting at 0."""
        return self.start < minute <= self.end or (self.start == 0.0 and minute == 0.0)


@dataclasses.dataclass(frozen=True)
class SegmentObservation:
    segment: Segment
    y_goals: float
    y_xg: float
    y_xp: float
    weight: float = 1.0
    m_league: tuple[int, ...] = ()

    def to_dict(self, leagues: Sequence[str]) -> dict:
        s = self.segment
        return {
            "matchId": s.match_id,
            "date": s.date.isoformat(),
            "leagueId": s.league_id,
            "season": s.season,
            "startMinute": s.start,
            "endMinute": s.end,
            "durationMin": s.duration,
            "homeOnPitch": list(s.home_on),
            "awayOnPitch": list(s.away_on),
            "goalsHome": s.goals_home,
            "goalsAway": s.goals_away,
            "dismissalDummies": list(s.dismissal),
            "scoreAtStart": list(s.score_at_start),
            "redsAtStart": list(s.reds_at_start),
            "yGoals": self.y_goals,
            "yXg": self.y_xg,
            "yXp": self.y_xp,
            "weight": self.weight,
            "mLeague": {lg: m for lg, m in zip(leagues, self.m_league)},
        }

    @classmethod
    def from_dict(cls, d: dict, leagues: Sequence[str]) -> "SegmentObservation":
        seg = Segment(
            match_id=d["matchId"],
            date=dt.date.fromisoformat(d["date"]),
            league_id=d["leagueId"],
            season=d["season"],
            start=float(d["startMinute"]),
            end=float(d["endMinute"]),
            home_on=tuple(d["homeOnPitch"]),
            away_on=tuple(d["awayOnPitch"]),
            goals_home=int(d["goalsHome"]),
            goals_away=int(d["goalsAway"]),
            dismissal=tuple(int(v) for v in d["dismissalDummies"]),
            score_at_start=tuple(d["scoreAtStart"]),
            reds_at_start=tuple(d["redsAtStart"]),
        )
        m = d.get("mLeague", {})
        return cls(seg, float(d["yGoals"]), float(d["yXg"]), float(d["yXp"]),
                   float(d.get("weight", 1.0)), tuple(int(m.get(lg, 0)) for lg in leagues))


def dismissal_dummies(reds_home: int, reds_away: int) -> tuple[int, int, int]:
    """Signed dummies for the net red-card deficit; +1 entries mean home is short."""
    d = reds_home - reds_away
    k = min(abs(d), N_DISMISSAL)
    sign = 1 if d > 0 else -1
    return tuple(sign if i < k else 0 for i in range(N_DISMISSAL))


def build_segments(match: MatchRecord) -> list[Segment]:
    """Split a match into maximal constant-lineup segments covering (0, terminal]."""
    terminal = match.terminal_minute
    on = {"home": list(match.home_lineup), "away": list(match.away_lineup)}
    reds = {"home": 0, "away": 0}

    def apply(ev):
        if ev.kind == "substitution":
            lineup = on[ev.side]
            lineup[lineup.index(ev.player)] = ev.player_on
        elif ev.kind == "redCard":
            on[ev.side].remove(ev.player)
            reds[ev.side] += 1

    changes: dict[float, list] = {}
    for ev in match.events:
        if ev.kind != "goal":
            changes.setdefault(ev.minute, []).append(ev)
    goal_minutes = [(e.minute, e.side) for e in match.events if e.kind == "goal"]

    spans = []  # (start, end, home_on, away_on, reds)
    start = 0.0
    for minute in sorted(changes):
        if minute >= terminal:
            break
        if minute > start:
            spans.append((start, minute, tuple(on["home"]), tuple(on["away"]), (reds["home"], reds["away"])))
            start = minute
        for ev in changes[minute]:
            apply(ev)
    spans.append((start, terminal, tuple(on["home"]), tuple(on["away"]), (reds["home"], reds["away"])))

    segments = []
    score = [0, 0]
    for i, (s, e, home_on, away_on, red) in enumerate(spans):
        gh = ga = 0
        for minute, side in goal_minutes:
            inside = s < minute <= e or (i == 0 and minute == 0.0)
            if inside:
                if side == "home":
                    gh += 1
                else:
                    ga += 1
        segments.append(Segment(
            match_id=match.match_id,
            date=match.date,
            league_id=match.competition_id,
            season=match.season,
            start=s,
            end=e,
            home_on=home_on,
            away_on=away_on,
            goals_home=gh,
            goals_away=ga,
            dismissal=dismissal_dummies(*red),
            score_at_start=(score[0], score[1]),
            reds_at_start=red,
        ))
        score[0] += gh
        score[1] += ga
    return segments


def goal_differential_per90(segment: Segment) -> float:
    return (segment.goals_home - segment.goals_away) * 90.0 / segment.duration


def segment_weight(seg_date: dt.date, rating_date: dt.date, zeta: float) -> float:
    """exp(-zeta * t) with t the distance in half-week units."""
    days = (rating_date - seg_date).days
    if days < 0:
        raise FutureSegment(f"segment dated {seg_date} is after rating date {rating_date}")
    return math.exp(-zeta * days / HALF_WEEK_DAYS)


# --------------------------------------------------------------------------
# league adaptation


def _months_before(date: dt.date, months: int) -> dt.date:
    y, m = divmod(date.year * 12 + date.month - 1 - months, 12)
    m += 1
    return dt.date(y, m, min(date.day, calendar.monthrange(y, m)[1]))


class AdaptationLedger:
    """Per-player appearance history by competition and season.

    Any appearance counts as a game, including coming on as a substitute.
    """

    def __init__(self, matches: Iterable[MatchRecord] = ()):
        self._dates: dict[str, list[dt.date]] = defaultdict(list)
        self._games: dict[str, list[tuple[str, str]]] = defaultdict(list)
        self._cache: dict[tuple, frozenset[str]] = {}
        rows = []
        for m in matches:
            players = set(m.home_lineup) | set(m.away_lineup)
            players.update(e.player_on for e in m.events if e.kind == "substitution")
            for pid in players:
                rows.append((m.date, m.match_id, pid, m.competition_id, m.season))
        rows.sort()
        for date, _, pid, comp, season in rows:
            self._dates[pid].append(date)
            self._games[pid].append((comp, season))

    def __contains__(self, player: str) -> bool:
        return player in self._dates

    def add(self, player: str, date: dt.date, competition: str, season: str) -> None:
        i = bisect.bisect_right(self._dates[player], date)
        self._dates[player].insert(i, date)
        self._games[player].insert(i, (competition, season))
        self._cache.clear()

    def games_before(self, player: str, date: dt.date) -> list[tuple[dt.date, str, str]]:
        if player not in self._dates:
            raise UnknownPlayer(f"player {player!r} not in adaptation ledger")
        dates = self._dates[player]
        hi = bisect.bisect_left(dates, date)
        return [(dates[i], *self._games[player][i]) for i in range(hi)]

    def season_games(self, player: str, date: dt.date, competition: str, season: str) -> int:
        return sum(1 for _, c, s in self.games_before(player, date) if c == competition and s == season)

    def lookback_games(self, player: str, date: dt.date) -> dict[str, int]:
        since = _months_before(date, ADAPT_LOOKBACK_MONTHS)
        counts: dict[str, int] = defaultdict(int)
        for d, comp, _ in self.games_before(player, date):
            if d >= since:
                counts[comp] += 1
        return dict(counts)

    def adapted_leagues(self, player: str, date: dt.date, season: str) -> frozenset[str]:
        """All competitions the player counts as adapted to before ``date``."""
        key = (player, date, season)
        if key not in self._cache:
            self._cache[key] = self._adapted(player, date, season)
        return self._cache[key]

    def _adapted(self, player: str, date: dt.date, season: str) -> frozenset[str]:
        games = self.games_before(player, date)
        out = set()
        season_counts: dict[str, int] = defaultdict(int)
        for _, comp, s in games:
            if s == season:
                season_counts[comp] += 1
        out.update(c for c, n in season_counts.items() if n >= ADAPT_SEASON_GAMES)
        lookback = self.lookback_games(player, date)
        if lookback:
            best = max(lookback.values())
            leaders = [c for c, n in lookback.items() if n == best]
            if len(leaders) == 1:
                out.add(leaders[0])
        return frozenset(out)


def adaptation_status(
    ledger: AdaptationLedger, player: str, match_date: dt.date, league: str, season: str
) -> bool:
    """True if ``player`` is adapted to ``league`` for a match on ``match_date``.

    Only games strictly before the match date count.  Ties on the 18-month
    clause adapt the player to neither league.
    """
    return league in ledger.adapted_leagues(player, match_date, season)


def league_balance(segment: Segment, ledger: AdaptationLedger, leagues: Sequence[str]) -> tuple[int, ...]:
    """Home-minus-away count of on-pitch players adapted to each league."""
    index = {lg: i for i, lg in enumerate(leagues)}
    m = [0] * len(leagues)
    for players, sign in ((segment.home_on, 1), (segment.away_on, -1)):
        for pid in players:
            for lg in ledger.adapted_leagues(pid, segment.date, segment.season):
                if lg in index:
                    m[index[lg]] += sign
    return tuple(m)


# --------------------------------------------------------------------------
# raw plus-minus


def basic_pm(appearances: Sequence[tuple[float, float, float]]) -> float:
    """Sum over appearances of goal difference per minute, times 90.

    Each appearance is ``(minutes, goals_for, goals_against)``.
    """
    if not appearances or sum(a[0] for a in appearances) <= 0:
        raise ZeroMinutes("plus-minus needs positive minutes")
    total = 0.0
    for minutes, gf, ga in appearances:
        if minutes <= 0:
            raise ZeroMinutes("appearance with non-positive minutes")
        total += (gf - ga) / minutes
    return total * 90.0


def net_pm(on: Sequence[tuple[float, float, float]], off: Sequence[tuple[float, float, float]]) -> float:
    return basic_pm(on) - basic_pm(off)


def on_off_appearances(player: str, matches: Iterable[MatchRecord]):
    """Per-match on-pitch and off-pitch records for ``player``'s team.

    Only matches in which the player appeared contribute.  Off records with
    zero minutes (player played the whole match) are omitted.
    """
    on, off = [], []
    for match in matches:
        segs = build_segments(match)
        side = None
        for seg in segs:
            if player in seg.home_on:
                side = "home"
            elif player in seg.away_on:
                side = "away"
            if side:
                break
        if side is None:
            continue
        rec = {True: [0.0, 0, 0], False: [0.0, 0, 0]}
        for seg in segs:
            present = player in (seg.home_on if side == "home" else seg.away_on)
            gf, ga = (seg.goals_home, seg.goals_away) if side == "home" else (seg.goals_away, seg.goals_home)
            r = rec[present]
            r[0] += seg.duration
            r[1] += gf
            r[2] += ga
        on.append(tuple(rec[True]))
        if rec[False][0] > 0:
            off.append(tuple(rec[False]))
    return on, off


def minutes_by_year(segments: Iterable[Segment]) -> dict[int, dict[str, float]]:
    """Minutes on the pitch per player, by calendar year."""
    out: dict[int, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    for seg in segments:
        year = out[seg.date.year]
        for pid in (*seg.home_on, *seg.away_on):
            year[pid] += seg.duration
    return {y: dict(v) for y, v in out.items()}
