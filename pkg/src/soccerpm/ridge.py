"""Sparse design matrix and weighted ridge solves for the three plus-minus targets.

Columns are ordered: players (registry order), home advantage, the three
dismissal dummies, then one league-balance column per league.  Every column,
including the intercept, carries the same penalty ``lam``.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyObservationSet, EmptyWindow, NonConvergence, SingularUnregularized, UnknownPlayer
from .segmentation import HALF_WEEK_DAYS, N_DISMISSAL, SegmentObservation

TARGETS = ("pm", "xgpm", "xppm")
_TARGET_FIELD = {"pm": "y_goals", "xgpm": "y_xg", "xppm": "y_xp"}
DENSE_RANK_CHECK_MAX = 3000


@dataclasses.dataclass
class DesignMatrix:
    X: sp.csr_matrix
    players: list[str]
    leagues: list[str]
    weights: np.ndarray
    y: dict[str, np.ndarray]

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def columns(self) -> list[str]:
        return (self.players + ["homeAdvantage"] + [f"dismissal{i + 1}" for i in range(N_DISMISSAL)]
                + [f"league:{lg}" for lg in self.leagues])


def build_design_matrix(
    observations: Sequence[SegmentObservation],
    registry: Sequence[str],
    leagues: Sequence[str] = (),
) -> DesignMatrix:
    """+1/-1 player presence, intercept 1, signed dismissal dummies and league balances."""
    if not observations:
        raise EmptyObservationSet("no segments to build a design matrix from")
    col = {pid: j for j, pid in enumerate(registry)}
    n_players = len(registry)
    aux = n_players
    n_cols = n_players + 1 + N_DISMISSAL + len(leagues)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for obs in observations:
        seg = obs.segment
        for players, sign in ((seg.home_on, 1.0), (seg.away_on, -1.0)):
            for pid in players:
                try:
                    indices.append(col[pid])
                except KeyError:
                    raise UnknownPlayer(f"player {pid!r} not in registry") from None
                data.append(sign)
        indices.append(aux)
        data.append(1.0)
        for i, v in enumerate(seg.dismissal):
            if v:
                indices.append(aux + 1 + i)
                data.append(float(v))
        for i, v in enumerate(obs.m_league[:len(leagues)]):
            if v:
                indices.append(aux + 1 + N_DISMISSAL + i)
                data.append(float(v))
        indptr.append(len(indices))
    X = sp.csr_matrix((np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
                      shape=(len(observations), n_cols))
    y = {t: np.array([getattr(o, _TARGET_FIELD[t]) for o in observations], dtype=float) for t in TARGETS}
    w = np.array([o.weight for o in observations], dtype=float)
    return DesignMatrix(X, list(registry), list(leagues), w, y)


def solve_weighted_ridge(
    X: sp.spmatrix | np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    lam: float,
    tol: float = 1e-12,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Solve (X'WX + lam I) a = X'Wy by Jacobi-preconditioned conjugate gradients.

    Converges when |r| / |X'Wy| < tol.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    X = sp.csr_matrix(X)
    Xt = X.T.tocsr()
    n = X.shape[1]
    b = Xt @ (w * y)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)
    diag = np.asarray(X.multiply(X).T @ w).ravel() + lam
    if lam == 0.0:
        if n <= DENSE_RANK_CHECK_MAX:
            G = (Xt @ sp.diags(w) @ X).toarray()
            if np.linalg.matrix_rank(G) < n:
                raise SingularUnregularized("unpenalized normal equations are rank deficient")
        elif np.any(diag == 0):
            raise SingularUnregularized("empty column with lam = 0")
    inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    max_iter = max_iter or max(10 * n, 100)

    def matvec(v):
        return Xt @ (w * (X @ v)) + lam * v

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - matvec(x) if x0 is not None else b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        if np.linalg.norm(r) < tol * bnorm:
            return x
        Ap = matvec(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) < tol * bnorm:
        return x
    raise NonConvergence(f"CG: relative residual {np.linalg.norm(r) / bnorm:.3g} after {max_iter} iterations")


# --------------------------------------------------------------------------
# rating solutions


@dataclasses.dataclass(frozen=True)
class TargetCoefficients:
    players: dict[str, float]
    home_advantage: float
    dismissal: tuple[float, ...]
    leagues: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "players": self.players,
            "homeAdvantage": self.home_advantage,
            "dismissal": list(self.dismissal),
            "leagues": self.leagues,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetCoefficients":
        return cls(dict(d["players"]), float(d["homeAdvantage"]), tuple(d["dismissal"]), dict(d["leagues"]))


@dataclasses.dataclass(frozen=True)
class RatingSolution:
    targets: dict[str, TargetCoefficients]
    lam: float
    zeta: float
    rating_date: dt.date
    window_years: float = 2
    window_start: dt.date | None = None
    n_segments: int = 0

    def coefficient(self, target: str, player: str) -> float | None:
        return self.targets[target].players.get(player)

    def to_dict(self) -> dict:
        return {
            "ratingDate": self.rating_date.isoformat(),
            "window": {"years": self.window_years,
                       "start": self.window_start.isoformat() if self.window_start else None,
                       "end": self.rating_date.isoformat()},
            "hyperparameters": {"lambda": self.lam, "zeta": self.zeta},
            "nSegments": self.n_segments,
            "targets": {t: c.to_dict() for t, c in self.targets.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RatingSolution":
        start = d["window"].get("start")
        return cls({t: TargetCoefficients.from_dict(c) for t, c in d["targets"].items()},
                   float(d["hyperparameters"]["lambda"]), float(d["hyperparameters"]["zeta"]),
                   dt.date.fromisoformat(d["ratingDate"]), d["window"]["years"],
                   dt.date.fromisoformat(start) if start else None, int(d.get("nSegments", 0)))


def years_before(date: dt.date, years: float) -> dt.date:
    whole = int(years)
    if whole == years:
        try:
            return date.replace(year=date.year - whole)
        except ValueError:  # 29 February
            return date.replace(year=date.year - whole, day=28)
    return date - dt.timedelta(days=round(365.25 * years))


class RatingCorpus:
    """All segment observations with a global column layout, for repeated as-of solves."""

    def __init__(
        self,
        observations: Sequence[SegmentObservation],
        players: Sequence[str] | None = None,
        leagues: Sequence[str] = (),
    ):
        if not observations:
            raise EmptyObservationSet("empty corpus")
        if players is None:
            seen: dict[str, None] = {}
            for o in observations:
                for pid in (*o.segment.home_on, *o.segment.away_on):
                    seen.setdefault(pid, None)
            players = list(seen)
        self.observations = list(observations)
        self.design = build_design_matrix(self.observations, players, leagues)
        self.players = self.design.players
        self.leagues = self.design.leagues
        self.day = np.array([o.segment.date.toordinal() for o in self.observations])
        self.match_ids = np.array([o.segment.match_id for o in self.observations])
        self._player_col = {pid: j for j, pid in enumerate(self.players)}

    def __len__(self) -> int:
        return len(self.observations)

    def has_player(self, player: str) -> bool:
        return player in self._player_col

    def window_rows(self, rating_date: dt.date, window_years: float, allowed: np.ndarray | None = None):
        start = years_before(rating_date, window_years)
        rows = (self.day >= start.toordinal()) & (self.day < rating_date.toordinal())
        if allowed is not None:
            rows &= allowed
        return np.nonzero(rows)[0], start


def ratings_as_of(
    corpus: RatingCorpus,
    rating_date: dt.date,
    lam: float,
    zeta: float,
    window_years: float = 2,
    allowed: np.ndarray | None = None,
    targets: Sequence[str] = TARGETS,
    warm: RatingSolution | None = None,
) -> RatingSolution:
    """Ridge solutions on segments dated in [rating_date - window, rating_date).

    Only players active in the window get a column; ``allowed`` optionally
    masks corpus rows (used for cross-validation folds).
    """
    rows, start = corpus.window_rows(rating_date, window_years, allowed)
    if len(rows) == 0:
        raise EmptyWindow(f"no segments in [{start}, {rating_date})")
    D = corpus.design
    Xw = D.X[rows]
    n_p = D.n_players
    active = np.unique(Xw.indices[Xw.indices < n_p])
    keep = np.concatenate([active, np.arange(n_p, D.X.shape[1])])
    Xs = Xw[:, keep]
    days = rating_date.toordinal() - corpus.day[rows]
    w = np.exp(-zeta * days / HALF_WEEK_DAYS)
    names = [corpus.players[j] for j in active]
    out = {}
    for t in targets:
        x0 = None
        if warm is not None and t in warm.targets:
            prev = warm.targets[t]
            x0 = np.array([prev.players.get(p, 0.0) for p in names]
                          + [prev.home_advantage, *prev.dismissal]
                          + [prev.leagues.get(lg, 0.0) for lg in corpus.leagues])
        coef = solve_weighted_ridge(Xs, D.y[t][rows], w, lam, x0=x0)
        k = len(active)
        out[t] = TargetCoefficients(
            players={p: float(c) for p, c in zip(names, coef[:k])},
            home_advantage=float(coef[k]),
            dismissal=tuple(float(c) for c in coef[k + 1:k + 1 + N_DISMISSAL]),
            leagues={lg: float(c) for lg, c in zip(corpus.leagues, coef[k + 1 + N_DISMISSAL:])},
        )
    return RatingSolution(out, float(lam), float(zeta), rating_date, window_years, start, len(rows))
