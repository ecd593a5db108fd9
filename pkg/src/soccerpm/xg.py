"""Expected-goals model: shot features, goal-value lookup and per-type logistic specialists.

Every specialist is an L2-penalized logistic regression whose penalty is
picked by inner k-fold cross-validation on Brier score.  The feature set never
contains shooter identity or shooter skill, so the model can be used as a
rating target without feeding player quality back into itself.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCorpus, InsufficientData, MaskMismatch, NonConvergence
from .ingest import SHOT_TYPES, GK_SKILLS, Dataset, MatchRecord, ShotRecord

logger = logging.getLogger(__name__)

LOCATION_FEATURES = ("x", "yAdj", "goalViewAngle", "invDistance")
CONTEXT_FEATURES = ("timeOfPlay", "goalValue", "bigChance")
BASE_FEATURES = LOCATION_FEATURES + CONTEXT_FEATURES
GK_FEATURES = tuple(f"gk_{s}" for s in GK_SKILLS)
ALL_FEATURES = BASE_FEATURES + GK_FEATURES

ALPHAS = tuple(np.logspace(-4, 2, 7))
MIN_SHOTS = 50

GD_LEVELS = (-2, -1, 0, 1, 2)
TIME_BIN_MIN = 15.0
N_TIME_BINS = 6


@dataclasses.dataclass(frozen=True)
class PitchGeometry:
    length: float = 105.0
    width: float = 68.0
    goal_width: float = 7.32

    @property
    def max_distance(self) -> float:
        """Distance from the farthest corner to the centre of the attacked goal."""
        return math.hypot(self.length, self.width / 2.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class ShotFeatures:
    x: float
    yAdj: float
    goalViewAngle: float
    invDistance: float
    timeOfPlay: float
    goalValue: float
    bigChance: float
    gkSkills: tuple[float, ...] | None = None

    def values(self) -> dict[str, float]:
        out = {name: getattr(self, name) for name in BASE_FEATURES}
        if self.gkSkills is not None:
            out.update(zip(GK_FEATURES, self.gkSkills))
        return out

    def vector(self, mask: Sequence[str]) -> np.ndarray:
        vals = self.values()
        try:
            return np.array([vals[name] for name in mask], dtype=float)
        except KeyError as exc:
            raise MaskMismatch(f"feature {exc.args[0]!r} required by model is absent") from None


# --------------------------------------------------------------------------
# geometry


def goal_view_angle(x: float, y: float, pitch: PitchGeometry = PitchGeometry()) -> float:
    """Angle subtended by the goalposts at the shot point, as a fraction of pi."""
    depth = (1.0 - x) * pitch.length
    lateral = (y - 0.5) * pitch.width
    half = pitch.goal_width / 2.0
    angle = abs(math.atan2(half - lateral, depth) - math.atan2(-half - lateral, depth))
    return min(angle / math.pi, 1.0)


def inverse_distance(x: float, y: float, pitch: PitchGeometry = PitchGeometry()) -> float:
    d = math.hypot((1.0 - x) * pitch.length, (y - 0.5) * pitch.width)
    return max(0.0, 1.0 - d / pitch.max_distance)


# --------------------------------------------------------------------------
# goal value


@dataclasses.dataclass(frozen=True)
class GoalValueTable:
    """Normalized win-probability swing of one more goal, by goal difference and time bin."""

    values: np.ndarray  # (len(GD_LEVELS), N_TIME_BINS), in [0, 1]
    raw: np.ndarray

    @staticmethod
    def cell(goal_diff: int, minute: float) -> tuple[int, int]:
        gd = min(max(goal_diff, GD_LEVELS[0]), GD_LEVELS[-1])
        b = min(int(max(minute, 0.0) // TIME_BIN_MIN), N_TIME_BINS - 1)
        return gd - GD_LEVELS[0], b

    def lookup(self, goal_diff: int, minute: float) -> float:
        return float(self.values[self.cell(goal_diff, minute)])

    def to_dict(self) -> dict:
        return {
            "goalDiffLevels": list(GD_LEVELS),
            "binMinutes": TIME_BIN_MIN,
            "values": self.values.tolist(),
            "raw": self.raw.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GoalValueTable":
        return cls(np.asarray(d["values"], dtype=float), np.asarray(d["raw"], dtype=float))


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi == lo:
        return np.zeros_like(v, dtype=float)
    return (v - lo) / (hi - lo)


def build_goal_value_table(matches: Iterable[MatchRecord]) -> GoalValueTable:
    """Empirical |change in win frequency| from one extra goal in each (gd, bin) cell.

    Team-perspective states are sampled at every half minute mark m + 0.5,
    m = 0..89, from both sides of every match.
    """
    lo = GD_LEVELS[0] - 1
    n_gd = len(GD_LEVELS) + 2  # -3..+3 so that gd+1 exists for the top row
    wins = np.zeros((n_gd, N_TIME_BINS))
    counts = np.zeros((n_gd, N_TIME_BINS))
    sample_t = np.arange(90) + 0.5
    bins = np.minimum((sample_t // TIME_BIN_MIN).astype(int), N_TIME_BINS - 1)
    n_matches = 0
    for match in matches:
        n_matches += 1
        home_goals = np.array([e.minute for e in match.events if e.kind == "goal" and e.side == "home"])
        away_goals = np.array([e.minute for e in match.events if e.kind == "goal" and e.side == "away"])
        gd = (np.searchsorted(np.sort(home_goals), sample_t, side="right")
              - np.searchsorted(np.sort(away_goals), sample_t, side="right"))
        final_h, final_a = match.score
        for sign, won in ((1, final_h > final_a), (-1, final_a > final_h)):
            idx = np.clip(sign * gd, lo, -lo) - lo
            np.add.at(counts, (idx, bins), 1.0)
            if won:
                np.add.at(wins, (idx, bins), 1.0)
    if n_matches == 0:
        raise EmptyCorpus("goal value table needs at least one match")
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = wins / counts
    raw = np.abs(freq[2:, :] - freq[1:-1, :])
    valid = np.isfinite(raw)
    fill = float(np.mean(raw[valid])) if valid.any() else 0.0
    raw = np.where(valid, raw, fill)
    return GoalValueTable(_minmax(raw), raw)


def shot_match_state(match: MatchRecord, shot: ShotRecord) -> tuple[int, float]:
    """Shooter-perspective goal difference from goals strictly before the shot."""
    gd = 0
    for e in match.events:
        if e.kind == "goal" and e.minute < shot.minute:
            gd += 1 if e.side == "home" else -1
    if shot.side == "away":
        gd = -gd
    return gd, shot.minute


def extract_features(
    shot: ShotRecord,
    table: GoalValueTable,
    match_state: tuple[int, float],
    pitch: PitchGeometry = PitchGeometry(),
) -> ShotFeatures:
    goal_diff, minute = match_state
    return ShotFeatures(
        x=shot.x,
        yAdj=2.0 * abs(shot.y - 0.5),
        goalViewAngle=goal_view_angle(shot.x, shot.y, pitch),
        invDistance=inverse_distance(shot.x, shot.y, pitch),
        timeOfPlay=min(minute, 90.0) / 90.0,
        goalValue=table.lookup(goal_diff, minute),
        bigChance=1.0 if shot.big_chance else 0.0,
        gkSkills=shot.gk_skills,
    )


def feature_mask(shot_type: str, with_gk: bool) -> tuple[str, ...]:
    base = CONTEXT_FEATURES if shot_type == "penalty" else BASE_FEATURES
    return base + (GK_FEATURES if with_gk else ())


# --------------------------------------------------------------------------
# logistic regression


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def penalized_nll(params: np.ndarray, X: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """Mean negative log-likelihood plus 0.5 * alpha * |coef|^2; params[0] is the intercept."""
    z = params[0] + X @ params[1:]
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(nll + 0.5 * alpha * params[1:] @ params[1:])


def penalized_nll_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    r = _sigmoid(params[0] + X @ params[1:]) - y
    n = len(y)
    g = np.empty_like(params, dtype=float)
    g[0] = r.sum() / n
    g[1:] = X.T @ r / n + alpha * params[1:]
    return g


def fit_logistic(
    X: np.ndarray, y: np.ndarray, alpha: float, tol: float = 1e-9, max_iter: int = 100
) -> np.ndarray:
    """Newton's method with backtracking; returns [intercept, coef...]."""
    n, k = X.shape
    p0 = min(max(y.mean(), 1e-6), 1 - 1e-6)
    params = np.zeros(k + 1)
    params[0] = math.log(p0 / (1 - p0))
    A = np.hstack([np.ones((n, 1)), X])
    ridge = np.full(k + 1, alpha)
    ridge[0] = 0.0
    f = penalized_nll(params, X, y, alpha)
    for _ in range(max_iter):
        g = penalized_nll_grad(params, X, y, alpha)
        if np.max(np.abs(g)) < tol:
            return params
        p = _sigmoid(A @ params)
        H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(ridge)
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, g)
        t = 1.0
        while True:
            cand = params - t * step
            fc = penalized_nll(cand, X, y, alpha)
            if fc <= f + 1e-4 * t * (g @ -step) or t < 1e-10:
                break
            t *= 0.5
        params, f = cand, fc
    g = penalized_nll_grad(params, X, y, alpha)
    if np.max(np.abs(g)) < 1e-6:
        return params
    raise NonConvergence(f"logistic fit did not converge in {max_iter} iterations")


def baseline_brier(outcomes: Sequence[float] | np.ndarray) -> float:
    """Brier score of predicting the empirical goal rate for every shot, i.e. p(1 - p)."""
    y = np.asarray(outcomes, dtype=float)
    if y.size == 0:
        raise InsufficientData("baseline Brier needs at least one shot")
    p = y.mean()
    return float(p * (1.0 - p))


def _brier(p: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((p - y) ** 2))


def kfold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [np.sort(f) for f in np.array_split(rng.permutation(n), min(k, n))]


def select_alpha(X, y, folds: int, rng: np.random.Generator, alphas=ALPHAS) -> tuple[float, float]:
    """Penalty with the lowest out-of-fold Brier score; ties go to the larger penalty."""
    parts = kfold_indices(len(y), folds, rng)
    best = (math.inf, -math.inf)
    for alpha in alphas:
        sq = 0.0
        for test in parts:
            train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
            params = fit_logistic(X[train], y[train], alpha)
            p = _sigmoid(params[0] + X[test] @ params[1:])
            sq += float(np.sum((p - y[test]) ** 2))
        score = sq / len(y)
        if score < best[0] - 1e-15 or (abs(score - best[0]) <= 1e-15 and alpha > best[1]):
            best = (score, alpha)
    return best[1], best[0]


def _finite_or_none(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def _nan_if_none(v) -> float:
    return float("nan") if v is None else float(v)


@dataclasses.dataclass(frozen=True)
class XgModel:
    shot_type: str
    feature_mask: tuple[str, ...]
    coefficients: np.ndarray
    intercept: float
    alpha: float = 0.0
    cv_brier: float = float("nan")
    baseline_brier: float = float("nan")
    n_shots: int = 0
    seed: int | None = None

    def linear_score(self, features: ShotFeatures | np.ndarray) -> float:
        v = features.vector(self.feature_mask) if isinstance(features, ShotFeatures) else np.asarray(features)
        if v.shape != (len(self.feature_mask),):
            raise MaskMismatch(f"expected {len(self.feature_mask)} features, got {v.shape}")
        return float(self.intercept + v @ self.coefficients)

    def to_dict(self) -> dict:
        return {
            "shotType": self.shot_type,
            "featureMask": list(self.feature_mask),
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": float(self.intercept),
            "alpha": float(self.alpha),
            "cvBrier": _finite_or_none(self.cv_brier),
            "baselineBrier": _finite_or_none(self.baseline_brier),
            "nShots": self.n_shots,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "XgModel":
        return cls(d["shotType"], tuple(d["featureMask"]), np.asarray(d["coefficients"], dtype=float),
                   float(d["intercept"]), float(d["alpha"]), _nan_if_none(d["cvBrier"]),
                   _nan_if_none(d["baselineBrier"]), int(d["nShots"]), d.get("seed"))


def predict_xg(model: XgModel, features: ShotFeatures | np.ndarray) -> float:
    z = model.linear_score(features)
    # keep strictly inside (0, 1)
    return float(min(max(_sigmoid(z), 1e-12), 1.0 - 1e-12))


def fit_xg_model(
    X: np.ndarray,
    y: np.ndarray,
    shot_type: str,
    mask: Sequence[str],
    folds: int = 10,
    seed: int = 0,
    inner_folds: int = 5,
    alphas: Sequence[float] = ALPHAS,
) -> XgModel:
    """Nested CV: the outer loop estimates out-of-sample Brier, the inner loop picks the penalty."""
    X = np.asarray(X, dtype=float).reshape(len(y), len(mask))
    y = np.asarray(y, dtype=float)
    if len(y) < MIN_SHOTS:
        raise InsufficientData(f"{shot_type}: {len(y)} shots < {MIN_SHOTS}")
    rng = np.random.default_rng(seed)
    sq = 0.0
    for test in kfold_indices(len(y), folds, rng):
        train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
        alpha, _ = select_alpha(X[train], y[train], inner_folds, rng, alphas)
        params = fit_logistic(X[train], y[train], alpha)
        sq += float(np.sum((_sigmoid(params[0] + X[test] @ params[1:]) - y[test]) ** 2))
    alpha, _ = select_alpha(X, y, inner_folds, rng, alphas)
    params = fit_logistic(X, y, alpha)
    return XgModel(shot_type, tuple(mask), params[1:].copy(), float(params[0]), float(alpha),
                   sq / len(y), baseline_brier(y), len(y), seed)


# --------------------------------------------------------------------------
# model set over shot types


@dataclasses.dataclass
class XgModelSet:
    """Specialists per shot type, each with a variant with and without keeper skills."""

    models: dict[tuple[str, bool], XgModel]
    table: GoalValueTable
    pitch: PitchGeometry = PitchGeometry()
    seed: int | None = None

    def model_for(self, shot_type: str, has_gk: bool) -> XgModel:
        if has_gk and (shot_type, True) in self.models:
            return self.models[(shot_type, True)]
        return self.models[(shot_type, False)]

    def predict_shot(self, shot: ShotRecord, match: MatchRecord) -> float:
        feats = extract_features(shot, self.table, shot_match_state(match, shot), self.pitch)
        return predict_xg(self.model_for(shot.shot_type, shot.gk_skills is not None), feats)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "pitch": self.pitch.to_dict(),
            "goalValueTable": self.table.to_dict(),
            "models": [
                {"variant": "withGk" if gk else "noGk", **self.models[(t, gk)].to_dict()}
                for t, gk in sorted(self.models)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "XgModelSet":
        models = {}
        for m in d["models"]:
            models[(m["shotType"], m["variant"] == "withGk")] = XgModel.from_dict(m)
        return cls(models, GoalValueTable.from_dict(d["goalValueTable"]), PitchGeometry(**d["pitch"]), d.get("seed"))


def shot_design(
    shots: Sequence[ShotRecord],
    matches: Mapping[str, MatchRecord],
    table: GoalValueTable,
    mask: Sequence[str],
    pitch: PitchGeometry = PitchGeometry(),
) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([extract_features(s, table, shot_match_state(matches[s.match_id], s), pitch).vector(mask)
                  for s in shots], dtype=float).reshape(len(shots), len(mask))
    y = np.array([1.0 if s.is_goal else 0.0 for s in shots])
    return X, y


def fit_xg_models(
    dataset: Dataset,
    folds: int = 10,
    seed: int = 0,
    pitch: PitchGeometry = PitchGeometry(),
) -> XgModelSet:
    """Fit every specialist.  Types with too few shots fall back to a constant rate."""
    table = build_goal_value_table(dataset.matches.values())
    all_y = [1.0 if s.is_goal else 0.0 for s in dataset.shots]
    pooled = float(np.mean(all_y)) if all_y else 0.1
    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(2 * len(SHOT_TYPES))
    models = {}
    for i, shot_type in enumerate(SHOT_TYPES):
        for j, with_gk in enumerate((False, True)):
            shots = [s for s in dataset.shots if s.shot_type == shot_type and (s.gk_skills is not None or not with_gk)]
            mask = feature_mask(shot_type, with_gk)
            sub_seed = int(seeds[2 * i + j])
            try:
                X, y = shot_design(shots, dataset.matches, table, mask, pitch)
                models[(shot_type, with_gk)] = fit_xg_model(X, y, shot_type, mask, folds, sub_seed)
            except InsufficientData as exc:
                if with_gk:
                    continue
                logger.warning("%s; using a constant-rate model", exc)
                rate = float(np.mean([1.0 if s.is_goal else 0.0 for s in shots])) if shots else pooled
                rate = min(max(rate, 1e-6), 1 - 1e-6)
                models[(shot_type, False)] = XgModel(
                    shot_type, (), np.zeros(0), math.log(rate / (1 - rate)),
                    n_shots=len(shots), seed=sub_seed,
                    baseline_brier=rate * (1 - rate) if shots else float("nan"))
    return XgModelSet(models, table, pitch, seed)


def segment_xg_differential(segment, shot_xg: Iterable[tuple[str, float]]) -> float:
    """Home-minus-away expected goals per 90 minutes for one segment."""
    diff = 0.0
    for side, xg in shot_xg:
        diff += xg if side == "home" else -xg
    return diff * 90.0 / segment.duration
