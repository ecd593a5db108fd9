"""In-play outcome probabilities from a game-state scoring-intensity model.

Each team scores as a Poisson process whose log-intensity is additive in a
15-minute time block, the goal-difference level and the man-power level (both
from the home team's point of view, clipped at +/-3).  Team strengths are
deliberately left out.

Outcome probabilities are computed exactly: the goal-difference process is a
continuous-time Markov chain with a piecewise-constant generator, so a
backward table of terminal-outcome probabilities is built once per man-power
level on a fixed time grid and queried with one matrix exponential for
off-grid times.  :func:`simulate_outcomes` is an independent Monte Carlo
implementation of the same process.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import NonConvergence
from .ingest import MatchRecord

logger = logging.getLogger(__name__)

HORIZON = 93.0
STEP = 0.1
BLOCK_MIN = 15.0
N_BLOCKS = 6
LEVEL_CLIP = 3
N_LEVELS = 2 * LEVEL_CLIP + 1
GD_STATE_CLIP = 15
N_STATES = 2 * GD_STATE_CLIP + 1
FLOOR_RATE = 1e-6
CLIP_MASS_TOL = 1e-8
MIN_LEAGUE_MATCHES = 300

HOME, AWAY = 0, 1


@dataclasses.dataclass(frozen=True)
class GameState:
    minute: float
    goal_diff: int = 0
    man_power: int = 0  # reds(away) - reds(home)

    @classmethod
    def from_counts(cls, minute: float, score: tuple[int, int], reds: tuple[int, int]) -> "GameState":
        return cls(minute, score[0] - score[1], reds[1] - reds[0])


@dataclasses.dataclass(frozen=True)
class OutcomeDistribution:
    p_home: float
    p_draw: float
    p_away: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.p_home, self.p_draw, self.p_away


def level_index(value: int) -> int:
    return min(max(value, -LEVEL_CLIP), LEVEL_CLIP) + LEVEL_CLIP


def block_index(minute: float, horizon: float = HORIZON) -> int:
    """Block of the interval ending at ``minute``; minute 0 is in block 0."""
    if minute <= 0:
        return 0
    return min(int(math.ceil(minute / BLOCK_MIN)) - 1, N_BLOCKS - 1)


def block_edges(horizon: float = HORIZON) -> list[float]:
    return [BLOCK_MIN * i for i in range(N_BLOCKS)] + [horizon]


def expected_points(dist: OutcomeDistribution | Sequence[float], side: str) -> float:
    p_home, p_draw, p_away = dist.as_tuple() if isinstance(dist, OutcomeDistribution) else dist
    return 3.0 * (p_home if side == "home" else p_away) + p_draw


class HazardModel:
    """log rate[side] = baseline[side, block] + gd_effect[side, gd] + mp_effect[side, mp].

    Rates are goals per minute.  Effect arrays are indexed by level + 3 and
    the level-0 entries are pinned to zero.
    """

    def __init__(
        self,
        baseline: np.ndarray,
        gd_effect: np.ndarray | None = None,
        mp_effect: np.ndarray | None = None,
        horizon: float = HORIZON,
        step: float = STEP,
        diagnostics: dict | None = None,
    ):
        self.baseline = np.asarray(baseline, dtype=float).reshape(2, N_BLOCKS)
        self.gd_effect = np.zeros((2, N_LEVELS)) if gd_effect is None else np.asarray(gd_effect, dtype=float)
        self.mp_effect = np.zeros((2, N_LEVELS)) if mp_effect is None else np.asarray(mp_effect, dtype=float)
        self.gd_effect[:, LEVEL_CLIP] = 0.0
        self.mp_effect[:, LEVEL_CLIP] = 0.0
        self.horizon = float(horizon)
        self.step = float(step)
        self.diagnostics = diagnostics or {}
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._warned = False

    @classmethod
    def constant(cls, home_rate: float, away_rate: float, **kw) -> "HazardModel":
        with np.errstate(divide="ignore"):
            base = np.log(np.array([[home_rate] * N_BLOCKS, [away_rate] * N_BLOCKS], dtype=float))
        return cls(base, **kw)

    def rate(self, side: int, block: int, goal_diff: int, man_power: int) -> float:
        return float(np.exp(self.baseline[side, block]
                            + self.gd_effect[side, level_index(goal_diff)]
                            + self.mp_effect[side, level_index(man_power)]))

    def mirrored(self) -> "HazardModel":
        """Swap the teams: away becomes home with goal difference and man power negated."""
        return HazardModel(self.baseline[::-1].copy(), self.gd_effect[::-1, ::-1].copy(),
                           self.mp_effect[::-1, ::-1].copy(), self.horizon, self.step)

    # ---- exact solver

    def generator(self, block: int, man_power: int) -> np.ndarray:
        """Generator over goal-difference states -15..15; the end states absorb."""
        Q = np.zeros((N_STATES, N_STATES))
        for i in range(1, N_STATES - 1):
            gd = i - GD_STATE_CLIP
            up = self.rate(HOME, block, gd, man_power)
            down = self.rate(AWAY, block, gd, man_power)
            Q[i, i + 1] = up
            Q[i, i - 1] = down
            Q[i, i] = -(up + down)
        return Q

    def _grid(self) -> np.ndarray:
        n = int(round(self.horizon / self.step))
        pts = set(np.round(np.arange(n + 1) * self.step, 10).tolist())
        pts.update(e for e in block_edges(self.horizon) if e <= self.horizon)
        pts.add(self.horizon)
        return np.array(sorted(p for p in pts if p <= self.horizon))

    def _table(self, man_power: int) -> tuple[np.ndarray, np.ndarray]:
        """Backward table u[k, state, :] = P(home win, draw, away win, clipped) at grid time k."""
        key = level_index(man_power)
        if key not in self._tables:
            grid = self._grid()
            terminal = np.zeros((N_STATES, 4))
            gd = np.arange(N_STATES) - GD_STATE_CLIP
            terminal[gd > 0, 0] = 1.0
            terminal[gd == 0, 1] = 1.0
            terminal[gd < 0, 2] = 1.0
            terminal[[0, -1], 3] = 1.0
            u = np.empty((len(grid), N_STATES, 4))
            u[-1] = terminal
            props: dict[tuple[int, float], np.ndarray] = {}
            for k in range(len(grid) - 2, -1, -1):
                dt_ = round(grid[k + 1] - grid[k], 10)
                b = block_index(grid[k + 1], self.horizon)
                if (b, dt_) not in props:
                    props[(b, dt_)] = expm(self.generator(b, man_power) * dt_)
                u[k] = props[(b, dt_)] @ u[k + 1]
            self._tables[key] = (grid, u)
        return self._tables[key]

    def outcome_probabilities(self, state: GameState) -> OutcomeDistribution:
        minute = min(max(state.minute, 0.0), self.horizon)
        i = min(max(state.goal_diff, -GD_STATE_CLIP), GD_STATE_CLIP) + GD_STATE_CLIP
        grid, u = self._table(state.man_power)
        k = int(np.searchsorted(grid, minute - 1e-9))
        if abs(grid[k] - minute) <= 1e-9:
            row = u[k, i]
        else:
            b = block_index(grid[k], self.horizon)
            row = (expm(self.generator(b, state.man_power) * (grid[k] - minute)) @ u[k])[i]
        if abs(state.goal_diff) <= GD_STATE_CLIP // 2 and row[3] > CLIP_MASS_TOL and not self._warned:
            # once per model; later states are usually the same extrapolation
            self._warned = True
            warnings.warn(f"probability mass {row[3]:.2e} absorbed at the goal-difference clip from {state}",
                          RuntimeWarning, stacklevel=2)
        p = np.clip(row[:3], 0.0, 1.0)
        p = p / p.sum()
        return OutcomeDistribution(float(p[0]), float(p[1]), float(p[2]))

    # ---- persistence

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "gridStep": self.step,
            "blockEdges": block_edges(self.horizon),
            "levels": list(range(-LEVEL_CLIP, LEVEL_CLIP + 1)),
            "baselineLogRate": {"home": self.baseline[HOME].tolist(), "away": self.baseline[AWAY].tolist()},
            "goalDiffEffect": {"home": self.gd_effect[HOME].tolist(), "away": self.gd_effect[AWAY].tolist()},
            "manPowerEffect": {"home": self.mp_effect[HOME].tolist(), "away": self.mp_effect[AWAY].tolist()},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HazardModel":
        def pair(key):
            return np.array([d[key]["home"], d[key]["away"]], dtype=float)

        return cls(pair("baselineLogRate"), pair("goalDiffEffect"), pair("manPowerEffect"),
                   d["horizon"], d["gridStep"], d.get("diagnostics"))


def outcome_probabilities(model: HazardModel, state: GameState) -> OutcomeDistribution:
    return model.outcome_probabilities(state)


# --------------------------------------------------------------------------
# Monte Carlo oracle


def simulate_outcomes(model: HazardModel, state: GameState, runs: int, seed: int) -> OutcomeDistribution:
    """Sample match continuations exactly: exponential waiting times within constant-rate stretches."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rng = np.random.default_rng(seed)
    edges = np.array(block_edges(model.horizon))
    t = np.full(runs, min(max(float(state.minute), 0.0), model.horizon), dtype=float)
    gd = np.full(runs, state.goal_diff, dtype=np.int64)
    mp_i = level_index(state.man_power)
    with np.errstate(over="ignore"):
        base_h = np.exp(model.baseline[HOME] + model.mp_effect[HOME, mp_i])
        base_a = np.exp(model.baseline[AWAY] + model.mp_effect[AWAY, mp_i])
        eff_h = np.exp(model.gd_effect[HOME])
        eff_a = np.exp(model.gd_effect[AWAY])
    active = t < model.horizon
    while active.any():
        idx = np.nonzero(active)[0]
        ti = t[idx]
        blk = np.minimum(np.searchsorted(edges, ti, side="right") - 1, N_BLOCKS - 1)
        lvl = np.clip(gd[idx], -LEVEL_CLIP, LEVEL_CLIP) + LEVEL_CLIP
        lam_h = base_h[blk] * eff_h[lvl]
        lam_a = base_a[blk] * eff_a[lvl]
        total = lam_h + lam_a
        wait = np.full(len(idx), np.inf)
        pos = total > 0
        wait[pos] = rng.exponential(1.0, pos.sum()) / total[pos]
        block_end = edges[blk + 1]
        goal = ti + wait < block_end
        u = rng.random(len(idx))
        home_goal = goal & (u * np.where(pos, total, 1.0) < lam_h)
        away_goal = goal & ~home_goal
        t[idx] = np.where(goal, ti + wait, block_end)
        gd[idx] += home_goal.astype(np.int64) - away_goal.astype(np.int64)
        active[idx] = t[idx] < model.horizon
    return OutcomeDistribution(float(np.mean(gd > 0)), float(np.mean(gd == 0)), float(np.mean(gd < 0)))


# --------------------------------------------------------------------------
# fitting


def exposure_cells(matches: Iterable[MatchRecord], horizon: float = HORIZON) -> dict[tuple[int, int, int], list]:
    """Exposure minutes and goals per (block, gd level, mp level) cell.

    Values are ``[exposure, home_goals, away_goals]``.  Goals count in the
    state holding just before they were scored.
    """
    edges = block_edges(horizon)
    cells: dict[tuple[int, int, int], list] = {}

    def add(a: float, b: float, gd: int, mp: int):
        if b <= a:
            return
        key_gd, key_mp = level_index(gd), level_index(mp)
        for blk in range(N_BLOCKS):
            lo, hi = max(a, edges[blk]), min(b, edges[blk + 1])
            if hi > lo:
                cells.setdefault((blk, key_gd, key_mp), [0.0, 0, 0])[0] += hi - lo

    for match in matches:
        end = min(match.terminal_minute, horizon)
        t, gd, mp = 0.0, 0, 0
        for ev in match.events:
            if ev.kind == "substitution" or ev.minute > end:
                continue
            add(t, ev.minute, gd, mp)
            t = max(t, ev.minute)
            if ev.kind == "goal":
                cell = cells.setdefault((block_index(ev.minute, horizon), level_index(gd), level_index(mp)),
                                        [0.0, 0, 0])
                cell[1 if ev.side == "home" else 2] += 1
                gd += 1 if ev.side == "home" else -1
            else:
                mp += 1 if ev.side == "away" else -1
        add(t, end, gd, mp)
    return cells


def _fit_side(blk, gdl, mpl, expo, goals, prior: float, tol: float, max_iter: int, side: str = "home"):
    """Penalized Poisson log-linear fit for one side; returns (baseline, gd_eff, mp_eff, gradnorm, iters)."""
    keep = expo > 0
    if (goals[~keep] > 0).any():
        logger.warning("dropping %d goals in zero-exposure cells", int(goals[~keep].sum()))
    blk, gdl, mpl, expo, goals = blk[keep], gdl[keep], mpl[keep], expo[keep], goals[keep]
    base0 = math.log(goals.sum() / expo.sum())
    gd_levels = [l for l in range(N_LEVELS) if l != LEVEL_CLIP and (gdl == l).any()]
    mp_levels = [l for l in range(N_LEVELS) if l != LEVEL_CLIP and (mpl == l).any()]
    for name, present in (("goal-difference", gd_levels), ("man-power", mp_levels)):
        missing = [l - LEVEL_CLIP for l in range(N_LEVELS) if l != LEVEL_CLIP and l not in present]
        if missing:
            logger.warning("%s: %s levels %s never observed; effects fixed at 0", side, name, missing)
    cols = ([blk == b for b in range(N_BLOCKS)] + [gdl == l for l in gd_levels] + [mpl == l for l in mp_levels])
    A = np.column_stack(cols).astype(float)
    offset = np.log(expo) + base0
    theta = np.zeros(A.shape[1])

    def loglik(th):
        eta = offset + A @ th
        return float(goals @ eta - np.exp(eta).sum() - 0.5 * prior * th @ th)

    f = loglik(theta)
    for it in range(1, max_iter + 1):
        mu = np.exp(offset + A @ theta)
        g = A.T @ (goals - mu) - prior * theta
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            break
        H = (A * mu[:, None]).T @ A + prior * np.eye(len(theta))
        step = np.linalg.solve(H, g)
        t = 1.0
        while True:
            cand = theta + t * step
            fc = loglik(cand)
            if fc >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        theta, f = cand, fc
    else:
        raise NonConvergence(f"hazard fit: gradient norm {gnorm:.3g} after {max_iter} iterations")
    baseline = base0 + theta[:N_BLOCKS]
    gd_eff = np.zeros(N_LEVELS)
    mp_eff = np.zeros(N_LEVELS)
    gd_eff[gd_levels] = theta[N_BLOCKS:N_BLOCKS + len(gd_levels)]
    mp_eff[mp_levels] = theta[N_BLOCKS + len(gd_levels):]
    return baseline, gd_eff, mp_eff, gnorm, it


def fit_hazards(
    matches: Sequence[MatchRecord],
    horizon: float = HORIZON,
    step: float = STEP,
    prior: float = 1e-2,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> HazardModel:
    """Poisson maximum likelihood over constant-state exposure cells.

    ``prior`` is a weak Gaussian penalty on the deviations from the pooled
    rate; it keeps levels with exposure but no goals finite.
    """
    cells = exposure_cells(matches, horizon)
    if not cells:
        raise ValueError("no exposure: empty match list")
    keys = sorted(cells)
    blk = np.array([k[0] for k in keys])
    gdl = np.array([k[1] for k in keys])
    mpl = np.array([k[2] for k in keys])
    expo = np.array([cells[k][0] for k in keys])
    baseline = np.full((2, N_BLOCKS), math.log(FLOOR_RATE))
    gd_eff = np.zeros((2, N_LEVELS))
    mp_eff = np.zeros((2, N_LEVELS))
    diag = {"nMatches": len(matches), "exposureMinutes": float(expo.sum()), "prior": prior}
    for side, name in ((HOME, "home"), (AWAY, "away")):
        goals = np.array([cells[k][1 + side] for k in keys], dtype=float)
        diag[f"{name}Goals"] = int(goals.sum())
        if goals.sum() == 0:
            logger.warning("no %s goals in corpus; using floor intensity %g/min", name, FLOOR_RATE)
            diag[f"{name}Floor"] = True
            continue
        b, g, m, gnorm, iters = _fit_side(blk, gdl, mpl, expo, goals, prior, tol, max_iter, name)
        baseline[side], gd_eff[side], mp_eff[side] = b, g, m
        diag[f"{name}GradNorm"] = gnorm
        diag[f"{name}Iterations"] = iters
    return HazardModel(baseline, gd_eff, mp_eff, horizon, step, diag)


class HazardSet:
    """One model per competition, with a pooled model for small leagues."""

    def __init__(self, models: Mapping[str, HazardModel], pooled: HazardModel):
        self.models = dict(models)
        self.pooled = pooled

    def for_league(self, league: str) -> HazardModel:
        return self.models.get(league, self.pooled)

    def to_dict(self) -> dict:
        return {"pooled": self.pooled.to_dict(), "leagues": {k: v.to_dict() for k, v in sorted(self.models.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "HazardSet":
        return cls({k: HazardModel.from_dict(v) for k, v in d["leagues"].items()}, HazardModel.from_dict(d["pooled"]))


def fit_hazard_set(
    matches: Sequence[MatchRecord],
    min_matches: int = MIN_LEAGUE_MATCHES,
    horizon: float = HORIZON,
    step: float = STEP,
) -> HazardSet:
    pooled = fit_hazards(matches, horizon, step)
    by_league: dict[str, list[MatchRecord]] = {}
    for m in matches:
        by_league.setdefault(m.competition_id, []).append(m)
    models = {lg: fit_hazards(ms, horizon, step) for lg, ms in sorted(by_league.items()) if len(ms) >= min_matches}
    return HazardSet(models, pooled)


# --------------------------------------------------------------------------
# xP target


def xp_target(model: HazardModel, segment, initial_freqs: Sequence[float]) -> float:
    """Change in home expected points minus change in away expected points over a segment.

    The start of a segment at minute 0 uses the league's empirical result
    frequencies.  The end state includes the segment's goals but keeps the
    segment's own man power; a red card at the boundary only affects the next
    segment's start.
    """
    if segment.duration <= 0:
        return 0.0
    if segment.start == 0.0:
        start = tuple(initial_freqs)
    else:
        start = model.outcome_probabilities(
            GameState.from_counts(segment.start, segment.score_at_start, segment.reds_at_start)).as_tuple()
    end = model.outcome_probabilities(
        GameState.from_counts(segment.end, segment.score_at_end, segment.reds_at_start)).as_tuple()
    d_home = expected_points(end, "home") - expected_points(start, "home")
    d_away = expected_points(end, "away") - expected_points(start, "away")
    return d_home - d_away
