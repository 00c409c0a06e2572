"""Quality scoring and evaluation metrics.

Score path: cosine similarity of the fused video feature against a positive
and a negative quality prompt, two-way softmax over the (optionally
temperature-scaled) similarities.  Training minimizes 1 - Pearson
correlation over a batch; evaluation reports Spearman and Pearson
correlations plus a four-parameter logistic fit of predictions to MOS.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

CORRELATION_EPS = 1e-12


@dataclass
class QualityPrediction:
    """One video's score with its similarity components and prompt texts."""

    q_pre: float
    s_pos: float
    s_neg: float
    prompt_pos: str = "high quality"
    prompt_neg: str = "low quality"

    def __post_init__(self):
        if not 0.0 < self.q_pre < 1.0:
            raise ValueError(f"score must lie strictly in (0, 1), got {self.q_pre}")


@dataclass
class ScoreBatch:
    pred: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.pred.shape != self.gt.shape or self.pred.ndim != 1:
            raise ShapeError(
                f"prediction/ground-truth vectors must match, got {self.pred.shape} vs {self.gt.shape}"
            )
        if not (np.all(np.isfinite(self.pred)) and np.all(np.isfinite(self.gt))):
            raise ValueError("score batch contains non-finite entries")


def prompt_similarity(fused: Tensor, pos: Tensor, neg: Tensor, temperature=1.0):
    """Similarity of the fused feature against each prompt embedding.

    Returns scalar graph nodes for a (D,) feature or (N,) nodes for a
    batched (N, D) feature."""
    tau = float(temperature)
    if fused.ndim == 1:
        s_pos = ad.mul(ad.cosine_similarity(fused, pos), tau)
        s_neg = ad.mul(ad.cosine_similarity(fused, neg), tau)
    elif fused.ndim == 2:
        s_pos = ad.mul(ad.rows_cosine(fused, pos), tau)
        s_neg = ad.mul(ad.rows_cosine(fused, neg), tau)
    else:
        raise ShapeError(f"fused feature must be (D,) or (N, D), got {fused.shape}")
    return s_pos, s_neg


def quality_score(s_pos: Tensor, s_neg: Tensor) -> Tensor:
    """Two-way softmax, exp(s+) / (exp(s+) + exp(s-)), computed stably."""
    return ad.sigmoid(ad.sub(s_pos, s_neg))


def plcc(batch: ScoreBatch) -> float:
    """Pearson linear correlation; degenerate variance is an error here."""
    x, y = batch.pred, batch.gt
    if x.size < 2:
        raise ShapeError(f"correlation needs n >= 2, got n={x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx <= CORRELATION_EPS or vy <= CORRELATION_EPS:
        raise ValueError("degenerate variance; correlation undefined")
    return float(np.dot(xc, yc) / (np.sqrt(vx) * np.sqrt(vy)))


def plcc_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Differentiable 1 - PLCC over a batch.

    A small epsilon lives inside each square root, so a collapsed batch
    (constant predictions early in training) degrades smoothly toward loss 1
    instead of dividing by zero."""
    if pred.ndim != 1 or gt.shape != pred.shape:
        raise ShapeError(f"expected matching vectors, got {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 2:
        raise ShapeError(f"correlation needs n >= 2, got n={pred.shape[0]}")
    pc = ad.sub(pred, ad.reduce_mean(pred))
    gc = ad.sub(gt, ad.reduce_mean(gt))
    cov = ad.reduce_mean(ad.mul(pc, gc))
    var_p = ad.reduce_mean(ad.mul(pc, pc))
    var_g = ad.reduce_mean(ad.mul(gc, gc))
    eps = Tensor(np.asarray(CORRELATION_EPS, dtype=pred.data.dtype))
    denom = ad.mul(ad.sqrt(ad.add(var_p, eps)), ad.sqrt(ad.add(var_g, eps)))
    return ad.sub(1.0, ad.div(cov, denom))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their rank range."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(batch: ScoreBatch) -> float:
    """Spearman rank correlation: Pearson on average-tied ranks."""
    rx = _average_ranks(batch.pred)
    ry = _average_ranks(batch.gt)
    return plcc(ScoreBatch(rx, ry))


# ---------------------------------------------------------------------------
# four-parameter logistic fit (predictions -> MOS scale)
# ---------------------------------------------------------------------------


@dataclass
class LogisticFit:
    """MOS ~ low + (high - low) / (1 + exp(-(x - center) / spread))."""

    params: tuple[float, float, float, float]  # (high, low, center, spread)
    converged: bool
    iterations: int
    residual: float

    def __call__(self, x):
        high, low, center, spread = self.params
        z = np.clip((np.asarray(x, dtype=np.float64) - center) / spread, -500, 500)
        return low + (high - low) / (1.0 + np.exp(-z))


def _logistic_residual_jacobian(params, x, y):
    high, low, center, spread = params
    z = np.clip((x - center) / spread, -500, 500)
    s = 1.0 / (1.0 + np.exp(-z))
    fit = low + (high - low) * s
    r = fit - y
    ds = s * (1.0 - s)
    jac = np.stack(
        [
            s,                                   # d/d high
            1.0 - s,                             # d/d low
            -(high - low) * ds / spread,         # d/d center
            -(high - low) * ds * z / spread,     # d/d spread
        ],
        axis=1,
    )
    return r, jac


def logistic_fit(batch: ScoreBatch, max_iter=200, tol=1e-8) -> LogisticFit:
    """Least-squares fit via damped Gauss-Newton.

    The damping factor adapts multiplicatively: steps that reduce the sum of
    squares are accepted and relax the damping, rejected steps tighten it.
    Non-convergence within ``max_iter`` is reported on the result, never
    swallowed.  A constant ground truth cannot anchor the curve and raises.
    """
    x = batch.pred
    y = batch.gt
    if x.size < 5:
        raise ShapeError(f"logistic fit needs n >= 5 points for 4 parameters, got {x.size}")
    if float(np.var(y)) <= CORRELATION_EPS:
        raise ValueError("degenerate (constant) ground truth; logistic fit undefined")
    spread0 = float(np.std(x))
    if spread0 <= 0:
        spread0 = 1.0
    params = np.array(
        [float(np.max(y)), float(np.min(y)), float(np.mean(x)), spread0],
        dtype=np.float64,
    )
    r, jac = _logistic_residual_jacobian(params, x, y)
    sse = float(r @ r)
    damping = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        try:
            step = np.linalg.solve(jtj + damping * np.eye(4), -jtr)
        except np.linalg.LinAlgError:
            damping *= 10.0
            continue
        trial = params + step
        if trial[3] == 0.0:
            trial[3] = np.finfo(np.float64).tiny
        r_trial, jac_trial = _logistic_residual_jacobian(trial, x, y)
        sse_trial = float(r_trial @ r_trial)
        if sse_trial <= sse:
            improvement = sse - sse_trial
            params, r, jac, sse = trial, r_trial, jac_trial, sse_trial
            damping = max(damping * 0.3, 1e-12)
            if improvement <= tol * max(sse, 1.0) and float(np.abs(step).max()) <= tol * 10:
                converged = True
                break
        else:
            damping *= 10.0
            if damping > 1e12:
                break
    return LogisticFit(
        params=tuple(float(v) for v in params),
        converged=converged,
        iterations=iterations,
        residual=sse,
    )


# ---------------------------------------------------------------------------
# CSV export for the plot path
# ---------------------------------------------------------------------------

SCORE_COLUMNS = ("video_id", "q_pre", "q_gt")


def write_scores_csv(rows, path):
    """rows: iterable of (video_id, q_pre, q_gt)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_COLUMNS)
        for video_id, q_pre, q_gt in rows:
            writer.writerow([video_id, repr(float(q_pre)), repr(float(q_gt))])


def read_scores_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(SCORE_COLUMNS)}")
        return [(vid, float(qp), float(qg)) for vid, qp, qg in reader]
