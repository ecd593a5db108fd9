import datetime as dt
import json

import numpy as np
import pytest

from soccerpm.ingest import EventRecord, MatchRecord
from soccerpm.synthetic import generate

# lines emitted by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def lineup(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}{i}" for i in range(1, 12))


def make_match(match_id="m1", date=dt.date(2016, 8, 13), competition="L", season="2016",
               home=None, away=None, events=(), terminal=90.0, home_team="H", away_team="A") -> MatchRecord:
    """MatchRecord built directly, bypassing the parser."""
    evs = tuple(e if isinstance(e, EventRecord) else EventRecord(*e) for e in events)
    return MatchRecord(match_id, date, competition, season, home_team, away_team,
                       tuple(home or lineup("h")), tuple(away or lineup("a")), float(terminal), evs)


def match_json(match_id="m1", date="2016-08-13", competition="L", season="2016", home=None, away=None,
               events=(), terminal=90.0) -> dict:
    return {
        "matchId": match_id, "date": date, "competitionId": competition, "season": season,
        "homeTeam": "H", "awayTeam": "A", "homeLineup": list(home or lineup("h")),
        "awayLineup": list(away or lineup("a")), "terminalMinute": terminal, "events": list(events),
    }


def jsonl(objs) -> list[str]:
    return [json.dumps(o) for o in objs]


@pytest.fixture(scope="session")
def small_corpus():
    """Two seasons of a ten-team league."""
    return generate(seasons=2, teams=10, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    return small_corpus.dataset()


def planted_hazard_matches(n, home=(0.016, 0.016), away=(0.012, 0.012), uplift=1.0, red_p=0.0, seed=0):
    """Matches whose goals follow piecewise-constant planted rates.

    ``home`` and ``away`` give the per-minute rate before and after minute
    45.  After a red card the opposing side scores ``uplift`` times faster.
    Goal difference has no effect.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        terminal = 90.0 + float(rng.integers(1, 7))
        red = None
        if rng.random() < red_p:
            red = (float(np.round(rng.uniform(5.0, 85.0), 2)), "home" if rng.random() < 0.5 else "away")
        cuts = sorted({0.0, 45.0, terminal} | ({red[0]} if red else set()))
        events = []
        for a, b in zip(cuts, cuts[1:]):
            for side, rates in (("home", home), ("away", away)):
                rate = rates[0] if a < 45.0 else rates[1]
                if red and a >= red[0] and red[1] != side:
                    rate *= uplift
                k = rng.poisson(rate * (b - a))
                for t in rng.uniform(a, b, k):
                    events.append((float(t), side, "goal", "h9" if side == "home" else "a9"))
        if red:
            events.append((red[0], red[1], "redCard", "h11" if red[1] == "home" else "a11"))
        events.sort(key=lambda e: e[0])
        out.append(make_match(f"p{i}", dt.date(2015, 1, 1) + dt.timedelta(days=i // 10), events=events,
                              terminal=terminal))
    return out
