"""Exact t-SNE (O(n^2) memory and time per iteration).

Gaussian input affinities calibrated per point to a target perplexity by
bisection on the precision, symmetrised into joint probabilities, matched by
a Student-t kernel in 2-D through gradient descent with momentum, per-parameter
gains and early exaggeration.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from streetctx.errors import StreetCtxError

FLOOR = 1e-12
LN2 = math.log(2.0)


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float | None = None  # None: min(30, (n - 1) / 3)
    output_dim: int = 2
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    seed: int = 0
    tol: float = 1e-5
    max_steps: int = 50
    init_std: float = 1e-2  # variance 1e-4
    use_gains: bool = True
    standardize: bool = False

    def resolved_perplexity(self, n: int) -> float:
        if self.perplexity is not None:
            return self.perplexity
        return min(30.0, (n - 1) / 3.0)


@dataclass
class Calibration:
    P: np.ndarray  # row-conditional, P[i, j] = p_{j|i}
    beta: np.ndarray
    entropy_bits: np.ndarray
    flagged: np.ndarray  # rows that hit max_steps before reaching tol


@dataclass
class Embedding:
    Y: np.ndarray
    kl: float
    trace: list = field(default_factory=list)


def pairwise_sq_dists(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    D = np.maximum((D + D.T) / 2.0, 0.0)
    np.fill_diagonal(D, 0.0)
    return D


def _row_entropy(d, beta):
    """Conditional probabilities and their entropy (bits) for distances ``d``."""
    p = np.exp(-beta * d)
    s = p.sum()
    h = math.log(s) + beta * float(np.dot(d, p)) / s
    return p / s, h / LN2


def perplexity_calibrate(D, perplexity: float, tol: float = 1e-5, max_steps: int = 50) -> Calibration:
    """Bisect each row's precision until its entropy is ``log2(perplexity)`` bits."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if 3 * perplexity > n - 1:
        raise StreetCtxError(
            f"perplexity {perplexity} too large for {n} points (need 3 * perplexity <= {n - 1})"
        )
    target = math.log2(perplexity)
    P = np.zeros((n, n))
    betas = np.zeros(n)
    ents = np.zeros(n)
    flagged = np.zeros(n, dtype=bool)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()  # shift cancels in the normalisation
        mean = d.mean()
        beta = 1.0 / mean if mean > 0 else 1.0
        lo, hi = 0.0, math.inf
        for _ in range(max_steps):
            p, h = _row_entropy(d, beta)
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                nxt = beta * 2.0 if hi == math.inf else (beta + hi) / 2.0
            else:
                hi = beta
                nxt = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            if _ == max_steps - 1:
                flagged[i] = True  # keep the last evaluated iterate
            else:
                beta = nxt
        P[i, np.arange(n) != i] = p
        betas[i] = beta
        ents[i] = h
    return Calibration(P, betas, ents, flagged)


def symmetrize(P_cond) -> np.ndarray:
    """Joint ``(p_{j|i} + p_{i|j}) / 2n``; off-diagonal floored at 1e-12, then renormalised."""
    P_cond = np.asarray(P_cond, dtype=np.float64)
    n = P_cond.shape[0]
    P = (P_cond + P_cond.T) / (2.0 * n)
    P = np.maximum(P, FLOOR)
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


def student_t_affinities(Y):
    """``(Q, num)`` where ``num[i, j] = 1 / (1 + |y_i - y_j|^2)`` with zero diagonal."""
    num = 1.0 / (1.0 + pairwise_sq_dists(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def tsne_gradient(P, Y):
    """Gradient of KL(P || Q(Y)) with respect to ``Y``, and Q itself."""
    Q, num = student_t_affinities(Y)
    W = (P - Q) * num
    grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
    return grad, Q


def kl_divergence(P, Q) -> float:
    """``sum p log(p / q)`` with both arguments floored at 1e-12."""
    p = np.maximum(np.asarray(P, dtype=np.float64), FLOOR)
    q = np.maximum(np.asarray(Q, dtype=np.float64), FLOOR)
    return float(np.sum(p * np.log(p / q)))


def kl_objective(P, Y) -> float:
    return kl_divergence(P, student_t_affinities(Y)[0])


def joint_affinities(X, perplexity, tol=1e-5, max_steps=50):
    cal = perplexity_calibrate(pairwise_sq_dists(X), perplexity, tol, max_steps)
    return symmetrize(cal.P), cal


def tsne_embed(X, cfg: TsneConfig = TsneConfig()) -> Embedding:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise StreetCtxError(f"t-SNE needs an n x d matrix with n >= 4, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise StreetCtxError("feature matrix has non-finite values")
    n = X.shape[0]
    if cfg.standardize:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    P, _ = joint_affinities(X, cfg.resolved_perplexity(n), cfg.tol, cfg.max_steps)

    rng = np.random.default_rng(cfg.seed)
    Y = rng.normal(0.0, cfg.init_std, size=(n, cfg.output_dim))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for it in range(cfg.iterations):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        grad, Q = tsne_gradient(exag * P, Y)
        trace.append(kl_divergence(P, Q))
        if cfg.use_gains:
            same = (grad > 0) == (update > 0)
            gains = np.where(same, gains * 0.8, gains + 0.2)
            np.maximum(gains, 0.01, out=gains)
            update = mom * update - cfg.learning_rate * gains * grad
        else:
            update = mom * update - cfg.learning_rate * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
    return Embedding(Y, kl_objective(P, Y), trace)


# -- I/O -------------------------------------------------------------------


def read_feature_csv(text: str):
    """``sample_id,label,f0..f{d-1}`` -> ``(ids, labels, X)``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["sample_id", "label"]:
        raise StreetCtxError("feature CSV header must start with sample_id,label")
    ids = [r[0] for r in rows[1:]]
    labels = [r[1] for r in rows[1:]]
    X = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=np.float64)
    return ids, labels, X


def write_feature_csv(ids, labels, X) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label"] + [f"f{k}" for k in range(X.shape[1])])
    for i, lab, row in zip(ids, labels, X):
        w.writerow([i, lab] + [repr(float(v)) for v in row])
    return buf.getvalue()


def embedding_to_csv(embedding: Embedding, ids, labels) -> str:
    if not (len(ids) == len(labels) == embedding.Y.shape[0]):
        raise StreetCtxError(
            f"{embedding.Y.shape[0]} embedded rows but {len(ids)} ids and {len(labels)} labels"
        )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label", "x", "y"])
    for i, lab, (x, y) in zip(ids, labels, embedding.Y):
        w.writerow([i, lab, f"{x:.9g}", f"{y:.9g}"])
    return buf.getvalue()


SCATTER_SIZE = 800
PALETTE = [
    (228, 26, 28), (55, 126, 184), (77, 175, 74), (152, 78, 163), (255, 127, 0),
    (166, 86, 40), (247, 129, 191), (153, 153, 153), (0, 0, 0), (27, 158, 119), (230, 171, 2),
]


def scatter_image(Y, labels, size: int = SCATTER_SIZE, radius: int = 2):
    """White raster with one filled square per point, coloured by label."""
    from streetctx.imagery import RgbImage

    img = np.full((size, size, 3), 255, dtype=np.uint8)
    Y = np.asarray(Y, dtype=np.float64)
    if len(Y) == 0:
        return RgbImage(img)
    margin = 10 + radius
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pix = margin + (Y - lo) / span * (size - 1 - 2 * margin)
    order = {lab: k for k, lab in enumerate(sorted(set(labels), key=str))}
    for (px, py), lab in zip(pix, labels):
        x, y = int(round(px)), int(round(size - 1 - py))
        img[y - radius : y + radius + 1, x - radius : x + radius + 1] = PALETTE[order[lab] % len(PALETTE)]
    return RgbImage(img)
