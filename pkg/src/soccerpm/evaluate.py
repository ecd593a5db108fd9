"""Brier scoring, ordered probit, cross-validated tuning and report products."""

from __future__ import annotations

import dataclasses
import datetime as dt
import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import (
    EmptyWindow,
    InvalidDistribution,
    LengthMismatch,
    NoEligiblePlayers,
    NonConvergence,
    TooFewLeagues,
    UnknownPlayer,
)
from .ingest import AWAY_WIN, DRAW, HOME_WIN, MatchRecord
from .ridge import TARGETS, RatingCorpus, RatingSolution, ratings_as_of

logger = logging.getLogger(__name__)

N_OUTCOMES = 3
SEPARATION_CAP = 50.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def brier_score(forecasts, outcomes) -> float:
    """Mean over matches of the summed squared error across the three outcome indicators.

    Column k of ``forecasts`` is the probability of category k
    (AWAY_WIN, DRAW, HOME_WIN).
    """
    P = np.asarray(forecasts, dtype=float).reshape(-1, N_OUTCOMES) if len(forecasts) else np.zeros((0, 3))
    o = np.asarray(outcomes, dtype=int)
    if len(P) != len(o):
        raise LengthMismatch(f"{len(P)} forecasts for {len(o)} outcomes")
    if len(P) == 0:
        raise LengthMismatch("no forecasts")
    if np.any(P < -1e-12) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidDistribution("forecast triples must be non-negative and sum to 1")
    if np.any((o < 0) | (o >= N_OUTCOMES)):
        raise InvalidDistribution("outcome category out of range")
    ind = np.zeros_like(P)
    ind[np.arange(len(o)), o] = 1.0
    return float(np.mean(np.sum((P - ind) ** 2, axis=1)))


# --------------------------------------------------------------------------
# ordered probit


@dataclasses.dataclass(frozen=True)
class OrderedProbitModel:
    beta: np.ndarray
    cut1: float
    cut2: float
    grad_norm: float = 0.0

    def linear(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, len(self.beta))
        return X @ self.beta

    def predict_proba(self, X) -> np.ndarray:
        """Rows of (P(away win), P(draw), P(home win))."""
        eta = self.linear(X)
        p_away = ndtr(self.cut1 - eta)
        p_home = ndtr(eta - self.cut2)
        p_draw = np.clip(1.0 - p_away - p_home, 0.0, 1.0)
        P = np.column_stack([p_away, p_draw, p_home])
        return P / P.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "cut1": self.cut1, "cut2": self.cut2, "gradNorm": self.grad_norm}


def _log_interval(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(a) - Phi(b)) for b < a, with infinite ends allowed."""
    # work in the tail where the difference is well conditioned
    flip = (b > 0)
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    la, lb = log_ndtr(a2), log_ndtr(b2)
    with np.errstate(divide="ignore"):
        return la + np.log1p(-np.exp(np.minimum(lb - la, 0.0)))


def _log_pdf(z: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(z), -0.5 * np.square(np.where(np.isfinite(z), z, 0.0)) - _LOG_SQRT_2PI, -np.inf)


def probit_nll(params: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and gradient in (beta, c1, c2) coordinates."""
    k = X.shape[1]
    beta, c1, c2 = params[:k], params[k], params[k + 1]
    eta = X @ beta
    cuts = np.array([-np.inf, c1, c2, np.inf])
    upper = cuts[y + 1] - eta
    lower = cuts[y] - eta
    logp = _log_interval(upper, lower)
    fa = np.exp(_log_pdf(upper) - logp)  # phi(upper) / P
    fb = np.exp(_log_pdf(lower) - logp)
    n = len(y)
    g_eta = fa - fb  # derivative of -log P with respect to eta
    grad = np.empty(k + 2)
    grad[:k] = X.T @ g_eta / n
    grad[k] = (-np.sum(fa[y == AWAY_WIN]) + np.sum(fb[y == DRAW])) / n
    grad[k + 1] = (-np.sum(fa[y == DRAW]) + np.sum(fb[y == HOME_WIN])) / n
    return float(-np.mean(logp)), grad


def fit_ordered_probit(
    X,
    y,
    init: OrderedProbitModel | None = None,
    tol: float = 1e-7,
    max_newton: int = 50,
) -> OrderedProbitModel:
    """Maximum likelihood by BFGS on (beta, c1, log(c2 - c1)), polished by Newton steps."""
    y = np.asarray(y, dtype=int)
    X_raw = np.asarray(X, dtype=float).reshape(len(y), -1)
    k = X_raw.shape[1]
    # fit on unit-variance covariates so step sizes and the separation check are scale free
    scale = X_raw.std(axis=0) if len(y) else np.ones(k)
    scale = np.where(scale > 0, scale, 1.0)
    X = X_raw / scale
    counts = np.bincount(y, minlength=N_OUTCOMES)
    if np.any(counts == 0):
        raise NonConvergence("each outcome category needs at least one match")
    if init is not None:
        theta0 = np.concatenate([init.beta * scale, [init.cut1, math.log(init.cut2 - init.cut1)]])
    else:
        f = counts / counts.sum()
        c1, c2 = ndtri(f[0]), ndtri(f[0] + f[1])
        theta0 = np.concatenate([np.zeros(k), [c1, math.log(c2 - c1)]])

    def unpack(theta):
        return np.concatenate([theta[:k], [theta[k], theta[k] + math.exp(theta[k + 1])]])

    def fun(theta):
        value, g = probit_nll(unpack(theta), X, y)
        gt = g.copy()
        gt[k] = g[k] + g[k + 1]
        gt[k + 1] = g[k + 1] * math.exp(theta[k + 1])
        return value, gt

    res = optimize.minimize(fun, theta0, jac=True, method="BFGS", options={"gtol": tol * 1e-2, "maxiter": 2000})
    params = unpack(res.x)
    # Newton polish in natural coordinates with a finite-difference Hessian of the analytic gradient
    for _ in range(max_newton):
        _, g = probit_nll(params, X, y)
        if np.linalg.norm(g) < tol:
            break
        h = 1e-6
        H = np.empty((k + 2, k + 2))
        for j in range(k + 2):
            e = np.zeros(k + 2)
            e[j] = h
            H[:, j] = (probit_nll(params + e, X, y)[1] - probit_nll(params - e, X, y)[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        f0 = probit_nll(params, X, y)[0]
        while t > 1e-8:
            cand = params - t * step
            if cand[k + 1] > cand[k] and probit_nll(cand, X, y)[0] <= f0 + 1e-15:
                params = cand
                break
            t *= 0.5
        else:
            break
    beta_s = params[:k]
    if np.any(np.abs(beta_s) > SEPARATION_CAP):
        logger.warning("standardized probit coefficients exceed %g; possible separation, capping", SEPARATION_CAP)
        beta_s = np.clip(beta_s, -SEPARATION_CAP, SEPARATION_CAP)
        params = np.concatenate([beta_s, params[k:]])
    beta = beta_s / scale
    _, g = probit_nll(np.concatenate([beta, params[k:]]), X_raw, y)
    gnorm = float(np.linalg.norm(g))
    if gnorm > max(tol, 1e-5) and not np.any(np.abs(beta_s) >= SEPARATION_CAP):
        raise NonConvergence(f"ordered probit gradient norm {gnorm:.3g}")
    return OrderedProbitModel(beta, float(params[k]), float(params[k + 1]), gnorm)


# --------------------------------------------------------------------------
# covariates


def match_covariates(
    match: MatchRecord,
    solution: RatingSolution,
    targets: Sequence[str] = TARGETS,
) -> tuple[np.ndarray, list[str]]:
    """Starting-XI mean coefficients ordered (home, away) within each target.

    The layout for all three targets is (pm home, pm away, xgpm home,
    xgpm away, xppm home, xppm away).  Unrated players count as 0 and are
    returned as the second element.
    """
    out = []
    unrated: set[str] = set()
    for t in targets:
        coef = solution.targets[t].players
        for lineup in (match.home_lineup, match.away_lineup):
            total = 0.0
            for pid in lineup:
                v = coef.get(pid)
                if v is None:
                    unrated.add(pid)
                else:
                    total += v
            out.append(total / len(lineup))
    return np.array(out), sorted(unrated)


# --------------------------------------------------------------------------
# tuning


@dataclasses.dataclass(frozen=True)
class GridPoint:
    lam: float
    zeta: float
    mean_brier: float
    sd_brier: float
    scores: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "zeta": self.zeta, "meanBrier": self.mean_brier,
                "sdBrier": self.sd_brier, "scores": list(self.scores)}


@dataclasses.dataclass(frozen=True)
class CvReport:
    grid: tuple[GridPoint, ...]
    selected: GridPoint
    folds: int
    repeats: int
    seed: int
    n_matches: int
    window_years: float
    targets: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "repeats": self.repeats,
            "seed": self.seed,
            "nMatchesEvaluated": self.n_matches,
            "windowYears": self.window_years,
            "targets": list(self.targets),
            "grid": [g.to_dict() for g in self.grid],
            "selected": {"lambda": self.selected.lam, "zeta": self.selected.zeta,
                         "meanBrier": self.selected.mean_brier, "sdBrier": self.selected.sd_brier},
        }


def month_starts(first: dt.date, last: dt.date, months: int = 1) -> list[dt.date]:
    """First-of-month dates from the month of ``first`` through the one after ``last``."""
    out = []
    y, m = first.year, first.month
    while True:
        d = dt.date(y, m, 1)
        out.append(d)
        if d > last:
            return out
        y, m = divmod(y * 12 + m - 1 + months, 12)
        m += 1


def select_grid_point(points: Sequence[GridPoint], tol: float = 1e-12) -> GridPoint:
    """Minimal mean Brier; ties go to larger lambda, then smaller zeta."""
    best = min(p.mean_brier for p in points)
    tied = [p for p in points if p.mean_brier <= best + tol]
    return sorted(tied, key=lambda p: (-p.lam, p.zeta))[0]


class _TuningProblem:
    """Shared, read-only state for cross-validation jobs."""

    def __init__(self, corpus, matches, window_years, burn_in_days, targets, refit_months):
        self.corpus = corpus
        self.matches = sorted(matches, key=lambda m: (m.date, m.match_id))
        self.window_years = window_years
        self.targets = tuple(targets)
        first = min(m.date for m in self.matches)
        cutoff = first + dt.timedelta(days=burn_in_days)
        self.eval_idx = np.array([i for i, m in enumerate(self.matches) if m.date >= cutoff], dtype=int)
        self.outcomes = np.array([m.result for m in self.matches])
        self.periods = month_starts(first, max(m.date for m in self.matches), refit_months)
        # match -> period index (last period start on or before the match date)
        starts = np.array([d.toordinal() for d in self.periods])
        days = np.array([m.date.toordinal() for m in self.matches])
        self.period_of = np.searchsorted(starts, days, side="right") - 1
        index = {m.match_id: i for i, m in enumerate(self.matches)}
        self.row_match = np.array([index.get(mid, -1) for mid in corpus.match_ids])

    def evaluate(self, lam: float, zeta: float, test: np.ndarray) -> float:
        """Brier score on the held-out matches ``test`` (indices into ``eval_idx``)."""
        n = len(self.matches)
        is_test = np.zeros(n, dtype=bool)
        is_test[self.eval_idx[test]] = True
        allowed = (self.row_match >= 0) & ~is_test[np.maximum(self.row_match, 0)]
        feats = np.zeros((n, 2 * len(self.targets)))
        have = np.zeros(n, dtype=bool)
        need = np.zeros(n, dtype=bool)
        need[self.eval_idx] = True
        warm = None
        for j, date in enumerate(self.periods):
            members = np.nonzero((self.period_of == j) & need)[0]
            if len(members) == 0:
                continue
            try:
                sol = ratings_as_of(self.corpus, date, lam, zeta, self.window_years, allowed, self.targets, warm)
            except EmptyWindow:
                continue
            warm = sol
            for i in members:
                feats[i], _ = match_covariates(self.matches[i], sol, self.targets)
                have[i] = True
        train = np.zeros(n, dtype=bool)
        train[self.eval_idx] = True
        train &= ~is_test & have
        tmask = is_test & have
        model = fit_ordered_probit(feats[train], self.outcomes[train])
        return brier_score(model.predict_proba(feats[tmask]), self.outcomes[tmask])


def _fold_assignments(n: int, folds: int, repeats: int, seed: int) -> list[list[np.ndarray]]:
    out = []
    for child in np.random.SeedSequence(seed).spawn(repeats):
        perm = np.random.default_rng(child).permutation(n)
        out.append([np.sort(f) for f in np.array_split(perm, folds)])
    return out


def tune_hyperparameters(
    corpus: RatingCorpus,
    matches: Iterable[MatchRecord],
    grid: Sequence[tuple[float, float]],
    folds: int = 10,
    repeats: int = 3,
    seed: int = 0,
    window_years: float = 2,
    burn_in_days: int = 365,
    targets: Sequence[str] = TARGETS,
    refit_months: int = 1,
    jobs: int = 1,
) -> CvReport:
    """Repeated k-fold over matches; each fold rates train-only segments as of monthly dates."""
    grid = [(float(l), float(z)) for l, z in grid]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    problem = _TuningProblem(corpus, matches, window_years, burn_in_days, targets, refit_months)
    if len(problem.eval_idx) < folds:
        raise ValueError("fewer evaluable matches than folds")
    assignments = _fold_assignments(len(problem.eval_idx), folds, repeats, seed)
    tasks = [(g, r, k) for g in range(len(grid)) for r in range(repeats) for k in range(folds)]

    def run(task):
        g, r, k = task
        return problem.evaluate(*grid[g], assignments[r][k])

    if jobs == 1:
        scores = [run(t) for t in tasks]
    else:
        from joblib import Parallel, delayed
        scores = Parallel(n_jobs=jobs, backend="threading")(delayed(run)(t) for t in tasks)
    per_point: dict[int, list[float]] = {g: [] for g in range(len(grid))}
    for (g, _, _), s in zip(tasks, scores):
        per_point[g].append(float(s))
    points = []
    for g, (lam, zeta) in enumerate(grid):
        s = np.array(per_point[g])
        points.append(GridPoint(lam, zeta, float(s.mean()), float(s.std(ddof=1)) if len(s) > 1 else 0.0, tuple(s)))
    return CvReport(tuple(points), select_grid_point(points), folds, repeats, seed,
                    int(len(problem.eval_idx)), window_years, tuple(targets))


# --------------------------------------------------------------------------
# reports


def minmax(values: np.ndarray, degenerate: float = 1.0) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to ``degenerate``."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, degenerate)
    return (v - lo) / (hi - lo)


@dataclasses.dataclass(frozen=True)
class BoardEntry:
    year: int
    rank: int
    player_id: str
    name: str | None
    score: float


@dataclasses.dataclass(frozen=True)
class PlayerBoard:
    entries: tuple[BoardEntry, ...]
    min_minutes: float

    def year(self, year: int) -> list[BoardEntry]:
        return [e for e in self.entries if e.year == year]


def top_players(
    solutions: Mapping[int, RatingSolution],
    minutes: Mapping[int, Mapping[str, float]],
    min_minutes: float = 900.0,
    names: Mapping[str, str | None] | None = None,
    top: int | None = None,
) -> PlayerBoard:
    """Per-year ranking by the mean of min-max normalized target coefficients."""
    names = names or {}
    entries = []
    for year in sorted(solutions):
        sol = solutions[year]
        mins = minutes.get(year, {})
        targets = list(sol.targets)
        eligible = sorted(p for p, m in mins.items() if m >= min_minutes
                          and all(p in sol.targets[t].players for t in targets))
        if not eligible:
            raise NoEligiblePlayers(f"no player reached {min_minutes} minutes in {year}")
        cols = [minmax(np.array([sol.targets[t].players[p] for p in eligible])) for t in targets]
        score = np.mean(cols, axis=0)
        order = sorted(range(len(eligible)), key=lambda i: (-score[i], eligible[i]))
        if top is not None:
            order = order[:top]
        for rank, i in enumerate(order, 1):
            entries.append(BoardEntry(year, rank, eligible[i], names.get(eligible[i]), float(score[i])))
    return PlayerBoard(tuple(entries), min_minutes)


@dataclasses.dataclass(frozen=True)
class LeagueRow:
    league: str
    scores: dict[str, float]
    mean: float


def league_strengths(solution: RatingSolution) -> list[LeagueRow]:
    """Min-max normalized league effects per target plus their mean, strongest first."""
    targets = list(solution.targets)
    leagues = sorted(solution.targets[targets[0]].leagues)
    if len(leagues) < 2:
        raise TooFewLeagues("league comparison needs at least two leagues")
    cols = {t: minmax(np.array([solution.targets[t].leagues[lg] for lg in leagues]), degenerate=0.0)
            for t in targets}
    rows = []
    for i, lg in enumerate(leagues):
        s = {t: float(cols[t][i]) for t in targets}
        rows.append(LeagueRow(lg, s, float(np.mean(list(s.values())))))
    return sorted(rows, key=lambda r: (-r.mean, r.league))


def rating_series(
    player: str,
    dates: Sequence[dt.date],
    corpus: RatingCorpus,
    lam: float,
    zeta: float,
    window_years: float = 2,
    targets: Sequence[str] = TARGETS,
) -> list[tuple[dt.date, dict[str, float | None]]]:
    """The player's coefficients as of each date; None where the player has no column."""
    if not corpus.has_player(player):
        raise UnknownPlayer(f"player {player!r} not in corpus")
    if list(dates) != sorted(dates):
        raise ValueError("dates must be ascending")
    out = []
    warm = None
    for d in dates:
        try:
            sol = ratings_as_of(corpus, d, lam, zeta, window_years, targets=targets, warm=warm)
        except EmptyWindow:
            out.append((d, {t: None for t in targets}))
            continue
        warm = sol
        out.append((d, {t: sol.targets[t].players.get(player) for t in targets}))
    return out
