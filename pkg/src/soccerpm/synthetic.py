"""Synthetic leagues with planted player strengths, used for recovery tests and demos.

Each player carries a contribution in goal-difference-per-90 units.  On-pitch
sums drive additive scoring rates, so the generating process matches the
linear plus-minus model up to the man-power effect.
Goals are produced by shots whose conversion follows a planted logistic curve.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
import os

import numpy as np

from .ingest import GK_SKILLS, EventRecord, MatchRecord, ShotRecord, build_dataset, dump_jsonl, match_to_dict, shot_to_dict
from .xg import PitchGeometry

_TYPES = ("penalty", "freekick", "header", "openplay")
_TYPE_P = np.array([0.012, 0.045, 0.165, 0.778])
# planted conversion model: intercept, invDistance, goalViewAngle, bigChance
_PLANTED = {
    "freekick": (-7.0, 5.5, 2.0, 1.2),
    "header": (-8.5, 6.5, 3.0, 1.6),
    "openplay": (-8.0, 6.5, 4.0, 1.8),
}
PENALTY_LOGIT = math.log(0.756 / 0.244)
SUB_COUNT_P = (0.05, 0.15, 0.30, 0.50)


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    seasons: int = 4
    teams: int = 20
    squad: int = 25
    leagues: int = 1
    start_year: int = 2013
    seed: int = 0
    team_sd: float = 0.06
    player_sd: float = 0.04
    league_sd: float = 0.03
    drift_sd: float = 0.0
    transfer_rate: float = 0.1
    red_rate: float = 0.04
    home_rate: float = 1.45
    away_rate: float = 1.12
    mp_uplift: float = 1.4
    gk_skill_rate: float = 0.7
    cup_matches: int = 0


@dataclasses.dataclass
class SyntheticCorpus:
    matches: list[MatchRecord]
    shots: list[ShotRecord]
    strengths: dict[str, float]
    names: dict[str, str]
    config: SyntheticConfig
    history: dict[dt.date, dict[str, float]] = dataclasses.field(default_factory=dict)

    def dataset(self):
        return build_dataset(self.matches, self.shots, self.names)

    def write(self, directory: str) -> tuple[str, str]:
        os.makedirs(directory, exist_ok=True)
        mpath = os.path.join(directory, "matches.jsonl")
        spath = os.path.join(directory, "shots.jsonl")
        with open(mpath, "w", encoding="utf-8") as fh:
            dump_jsonl((match_to_dict(m, self.names) for m in self.matches), fh)
        with open(spath, "w", encoding="utf-8") as fh:
            dump_jsonl((shot_to_dict(s) for s in self.shots), fh)
        with open(os.path.join(directory, "planted.json"), "w", encoding="utf-8") as fh:
            json.dump({"config": dataclasses.asdict(self.config), "strengths": self.strengths}, fh,
                      sort_keys=True, indent=1)
        return mpath, spath


def round_robin(n: int) -> list[list[tuple[int, int]]]:
    """Double round robin by the circle method; second half mirrors venues."""
    teams = list(range(n)) + ([None] if n % 2 else [])
    m = len(teams)
    rounds = []
    for r in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = teams[i], teams[m - 1 - i]
            if a is not None and b is not None:
                pairs.append((a, b) if (r + i) % 2 == 0 else (b, a))
        rounds.append(pairs)
        teams = [teams[0], teams[-1]] + teams[1:-1]
    return rounds + [[(b, a) for a, b in pairs] for pairs in rounds]


class _Generator:
    def __init__(self, cfg: SyntheticConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.pitch = PitchGeometry()
        rng = self.rng
        n_teams = cfg.teams * cfg.leagues
        self.team_league = np.repeat(np.arange(cfg.leagues), cfg.teams)
        self.squads = [[f"P{t:03d}{k:02d}" for k in range(cfg.squad)] for t in range(n_teams)]
        league_eff = rng.normal(0.0, cfg.league_sd, cfg.leagues) if cfg.leagues > 1 else np.zeros(1)
        team_eff = rng.normal(0.0, cfg.team_sd, n_teams) + league_eff[self.team_league]
        self.alpha: dict[str, float] = {}
        self.weight: dict[str, float] = {}
        for t, squad in enumerate(self.squads):
            for k, pid in enumerate(squad):
                self.alpha[pid] = float(team_eff[t] + rng.normal(0.0, cfg.player_sd))
                self.weight[pid] = 1.0 if k < 11 else (0.35 if k < 18 else 0.1)
        self.names = {pid: f"Player {pid[1:4]}-{pid[4:]}" for pid in self.alpha}
        self.mean_p = self._mean_conversion()
        self.matches: list[MatchRecord] = []
        self.shots: list[ShotRecord] = []
        self.history: dict[dt.date, dict[str, float]] = {}

    # shots ----------------------------------------------------------------

    def _locations(self, n: int, types: np.ndarray):
        rng = self.rng
        depth = np.clip(5.0 + rng.exponential(11.0, n), 5.0, 45.0)
        lateral = np.clip(rng.normal(0.0, 0.12, n), -0.45, 0.45)
        head = types == "header"
        depth[head] = np.clip(4.0 + rng.exponential(5.0, head.sum()), 4.0, 18.0)
        fk = types == "freekick"
        depth[fk] = np.clip(16.0 + rng.exponential(8.0, fk.sum()), 16.0, 40.0)
        pen = types == "penalty"
        depth[pen] = 11.0
        lateral[pen] = 0.0
        x = 1.0 - depth / self.pitch.length
        y = 0.5 + lateral
        return np.round(x, 4), np.round(y, 4)

    def _conversion(self, types, x, y, big) -> np.ndarray:
        depth = (1.0 - x) * self.pitch.length
        lat = (y - 0.5) * self.pitch.width
        dist = np.hypot(depth, lat)
        inv = 1.0 - dist / self.pitch.max_distance
        half = self.pitch.goal_width / 2.0
        gva = np.abs(np.arctan2(half - lat, depth) - np.arctan2(-half - lat, depth)) / math.pi
        z = np.full(len(types), PENALTY_LOGIT)
        for t, (b0, b_inv, b_gva, b_big) in _PLANTED.items():
            sel = types == t
            z[sel] = b0 + b_inv * inv[sel] + b_gva * gva[sel] + b_big * big[sel]
        return 1.0 / (1.0 + np.exp(-z))

    def _draw_shots(self, n: int):
        rng = self.rng
        types = np.array(_TYPES)[rng.choice(4, n, p=_TYPE_P)]
        x, y = self._locations(n, types)
        big = (rng.random(n) < 0.12).astype(float)
        big[types == "penalty"] = 1.0
        return types, x, y, big

    def _mean_conversion(self) -> float:
        types, x, y, big = self._draw_shots(100_000)
        return float(self._conversion(types, x, y, big).mean())

    # matches --------------------------------------------------------------

    def _pick_xi(self, team: int) -> list[str]:
        squad = self.squads[team]
        w = np.array([self.weight[p] for p in squad])
        idx = self.rng.choice(len(squad), 11, replace=False, p=w / w.sum())
        return [squad[i] for i in sorted(idx)]

    def _play(self, match_id, date, comp, season, home, away) -> None:
        cfg, rng = self.cfg, self.rng
        lineups = {"home": self._pick_xi(home), "away": self._pick_xi(away)}
        bench = {}
        for side, team in (("home", home), ("away", away)):
            rest = [p for p in self.squads[team] if p not in lineups[side]]
            w = np.array([self.weight[p] for p in rest])
            order = rng.choice(len(rest), len(rest), replace=False, p=w / w.sum())
            bench[side] = [rest[i] for i in order]
        planned = []
        for side in ("home", "away"):
            n_subs = int(rng.choice(4, p=SUB_COUNT_P))
            for m in np.round(rng.uniform(46.0, 89.0, n_subs)):
                planned.append((float(m), side, "substitution"))
            if rng.random() < cfg.red_rate:
                planned.append((float(np.round(rng.uniform(5.0, 89.0), 1)), side, "redCard"))
        planned.sort(key=lambda e: e[0])
        terminal = float(np.round(90.0 + rng.uniform(1.0, 6.0), 1))
        on = {s: list(lineups[s]) for s in lineups}
        reds = {"home": 0, "away": 0}
        events: list[EventRecord] = []
        t = 0.0
        for tau, group in self._groups(planned, terminal):
            if tau > t:
                self._simulate_interval(match_id, t, tau, on, reds, events, home, away)
            for _, side, kind in group:
                if kind == "substitution" and bench[side]:
                    out = on[side][int(rng.integers(len(on[side])))]
                    new = bench[side].pop(0)
                    on[side][on[side].index(out)] = new
                    events.append(EventRecord(tau, side, "substitution", out, new))
                elif kind == "redCard" and len(on[side]) > 7:
                    out = on[side].pop(int(rng.integers(len(on[side]))))
                    reds[side] += 1
                    events.append(EventRecord(tau, side, "redCard", out))
            t = tau
        events.sort(key=lambda e: e.minute)
        self.matches.append(MatchRecord(match_id, date, comp, season, f"T{home:03d}", f"T{away:03d}",
                                        tuple(lineups["home"]), tuple(lineups["away"]), terminal, tuple(events)))

    @staticmethod
    def _groups(planned, terminal):
        out: list[tuple[float, list]] = []
        for ev in planned:
            if out and out[-1][0] == ev[0]:
                out[-1][1].append(ev)
            else:
                out.append((ev[0], [ev]))
        out.append((terminal, []))
        return out

    def _simulate_interval(self, match_id, t0, t1, on, reds, events, home, away) -> None:
        cfg, rng = self.cfg, self.rng
        delta = sum(self.alpha[p] for p in on["home"]) - sum(self.alpha[p] for p in on["away"])
        rate = {
            "home": max(cfg.home_rate + delta / 2.0, 0.05) / 90.0,
            "away": max(cfg.away_rate - delta / 2.0, 0.05) / 90.0,
        }
        mp = reds["away"] - reds["home"]
        if mp > 0:
            rate["home"] *= cfg.mp_uplift ** min(mp, 3)
        elif mp < 0:
            rate["away"] *= cfg.mp_uplift ** min(-mp, 3)
        length = t1 - t0
        for side in ("home", "away"):
            n = int(rng.poisson(rate[side] / self.mean_p * length))
            if n == 0 or length < 0.1:
                continue
            minutes = np.sort(np.clip(np.round(rng.uniform(t0, t1, n), 1), t0 + 0.1, t1))
            types, x, y, big = self._draw_shots(n)
            p = self._conversion(types, x, y, big)
            goals = rng.random(n) < p
            for i in range(n):
                shooter = on[side][int(rng.integers(len(on[side])))]
                gk = None
                if rng.random() < cfg.gk_skill_rate:
                    gk = tuple(float(v) for v in np.round(rng.uniform(0.4, 0.9, len(GK_SKILLS)), 3))
                minute = float(minutes[i])
                self.shots.append(ShotRecord(match_id, minute, side, shooter, float(x[i]), float(y[i]), str(types[i]),
                                             bool(big[i]), "goal" if goals[i] else "noGoal", gk))
                if goals[i]:
                    events.append(EventRecord(minute, side, "goal", shooter))

    # calendar -------------------------------------------------------------

    def _drift(self, rounds: int) -> None:
        if self.cfg.drift_sd <= 0:
            return
        sd = self.cfg.drift_sd / math.sqrt(rounds)
        for pid in self.alpha:
            self.alpha[pid] += float(self.rng.normal(0.0, sd))

    def _transfers(self) -> None:
        cfg, rng = self.cfg, self.rng
        n_teams = len(self.squads)
        n_moves = int(round(cfg.transfer_rate * n_teams * cfg.squad / 2))
        for _ in range(n_moves):
            a, b = rng.choice(n_teams, 2, replace=False)
            i, j = int(rng.integers(cfg.squad)), int(rng.integers(cfg.squad))
            self.squads[a][i], self.squads[b][j] = self.squads[b][j], self.squads[a][i]

    def run(self) -> SyntheticCorpus:
        cfg = self.cfg
        schedule = round_robin(cfg.teams)
        for s in range(cfg.seasons):
            year = cfg.start_year + s
            season = f"{year}-{(year + 1) % 100:02d}"
            start = dt.date(year, 8, 12)
            if s > 0:
                self._transfers()
            for r, pairs in enumerate(schedule):
                date = start + dt.timedelta(days=7 * r)
                for lg in range(cfg.leagues):
                    offset = lg * cfg.teams
                    for i, (h, a) in enumerate(pairs):
                        mid = f"S{s}-L{lg}-R{r:02d}-{i:02d}"
                        self._play(mid, date, f"L{lg}", season, h + offset, a + offset)
                if cfg.leagues > 1 and cfg.cup_matches and r % 4 == 1:
                    self._cup_round(s, r, date + dt.timedelta(days=3), season)
                self._drift(len(schedule))
                self.history[date] = dict(self.alpha)
        return SyntheticCorpus(self.matches, self.shots, dict(self.alpha), self.names, cfg, self.history)

    def _cup_round(self, s, r, date, season) -> None:
        cfg, rng = self.cfg, self.rng
        per_round = max(1, cfg.cup_matches // max(1, len(round_robin(cfg.teams)) // 4))
        for i in range(per_round):
            la, lb = rng.choice(cfg.leagues, 2, replace=False)
            h = int(la) * cfg.teams + int(rng.integers(cfg.teams))
            a = int(lb) * cfg.teams + int(rng.integers(cfg.teams))
            self._play(f"S{s}-CUP-R{r:02d}-{i:02d}", date, "CUP", season, h, a)


def generate(config: SyntheticConfig | None = None, **overrides) -> SyntheticCorpus:
    cfg = dataclasses.replace(config or SyntheticConfig(), **overrides)
    return _Generator(cfg).run()
