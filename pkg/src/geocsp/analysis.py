"""Post-hoc interpretability suite.

Covers failure breakdowns by reasoning depth and constraint count, Manhattan
error histograms, embedding-geometry measurements (curvature of a 3D
projection, local 2D-ness of spatial windows, linear coordinate probes), the
nine normalized constraint-geometry scores for 2D projections, and MLP
probes over constraint hidden states.  Projections may come from the
built-in PCA or be imported from any external tool.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Constraint, Point
from .inference import ProblemPrediction
from .numerics import AdamW, Tensor, linear, mean_all, pca, relu, softmax_cross_entropy
from .solver import Problem, point_depths

# ---------------------------------------------------------------------------
# Failure analysis
# ---------------------------------------------------------------------------


@dataclass
class FailureBreakdown:
    """Success rates with sample counts, bucketed by point depth and by
    problem constraint count."""

    depth_success: dict[int, tuple[int, int]] = field(default_factory=dict)  # depth -> (correct, total)
    count_success: dict[int, tuple[int, int]] = field(default_factory=dict)  # constraints -> (solved, total)

    def depth_rate(self, depth: int) -> float:
        correct, total = self.depth_success[depth]
        return correct / total

    def count_rate(self, count: int) -> float:
        solved, total = self.count_success[count]
        return solved / total


def failure_analysis(problems: list[Problem], predictions: list[ProblemPrediction]) -> FailureBreakdown:
    out = FailureBreakdown()
    for problem, pred in zip(problems, predictions):
        depths = point_depths(problem)
        for v in problem.unknowns:
            d = depths[v]
            correct, total = out.depth_success.get(d, (0, 0))
            hit = int(pred.points[v] == problem.labels[v])
            out.depth_success[d] = (correct + hit, total + 1)
        k = len(problem.constraints)
        solved, total = out.count_success.get(k, (0, 0))
        all_right = all(pred.points[v] == problem.labels[v] for v in problem.unknowns)
        out.count_success[k] = (solved + int(all_right), total + 1)
    out.depth_success = dict(sorted(out.depth_success.items()))
    out.count_success = dict(sorted(out.count_success.items()))
    return out


def prediction_errors(problems: list[Problem], predictions: list[ProblemPrediction]) -> list[tuple[Point, Point]]:
    """(predicted, truth) pairs for every misclassified point."""
    errors = []
    for problem, pred in zip(problems, predictions):
        for v in problem.unknowns:
            if pred.points[v] != problem.labels[v]:
                errors.append((pred.points[v], problem.labels[v]))
    return errors


def manhattan_histogram(errors: list[tuple[Point, Point]]) -> dict[int, float]:
    """Relative frequency of |dx| + |dy| over misclassified points."""
    if not errors:
        return {}
    counts: dict[int, int] = {}
    for (px, py), (tx, ty) in errors:
        d = abs(px - tx) + abs(py - ty)
        counts[d] = counts.get(d, 0) + 1
    total = len(errors)
    return {d: c / total for d, c in sorted(counts.items())}


# ---------------------------------------------------------------------------
# Embedding geometry
# ---------------------------------------------------------------------------


def curvature(coords3d: np.ndarray, k: int = 8) -> tuple[np.ndarray, float]:
    """Eigenvalue-ratio curvature of local neighborhoods in a 3D projection.

    For each point, the covariance of the point and its ``k`` nearest
    neighbors gives kappa = lambda_min / (lambda_max + 1e-12); planar
    neighborhoods score 0.
    """
    x = np.asarray(coords3d, dtype=np.float64)
    n = len(x)
    if k < 3:
        raise ConfigError("curvature needs k >= 3")
    if n < k + 1:
        raise ConfigError("curvature needs at least k+1 points")
    kappas = np.zeros(n)
    chunk = max(1, min(n, 2_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d2 = ((x[start:stop, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
        neighbor_idx = np.argpartition(d2, k, axis=1)[:, : k + 1]
        for row, neighbors in enumerate(neighbor_idx):
            local = x[neighbors]
            cov = np.cov(local.T)
            eig = np.linalg.eigvalsh(cov)
            top = eig[-1]
            kappas[start + row] = 0.0 if top <= 0 else max(eig[0], 0.0) / (top + 1e-12)
    return kappas, float(kappas.mean())


def local_2dness(w: np.ndarray, n: int) -> float:
    """Mean top-2 explained variance of embeddings inside every interior
    3x3 spatial window of the grid."""
    if n < 3:
        raise ConfigError("local 2D-ness needs a grid side of at least 3")
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != n * n:
        raise ConfigError(f"expected {n * n} embedding rows, got {w.shape[0]}")
    ratios = []
    for cy in range(1, n - 1):
        for cx in range(1, n - 1):
            idx = [cx + dx + (cy + dy) * n for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
            _, explained = pca(w[idx], 2)
            ratios.append(explained.sum())
    return float(np.mean(ratios))


def coord_probe(w: np.ndarray, n: int, folds: int = 5, seed: int = 0) -> tuple[float, float]:
    """Cross-validated linear readout of grid coordinates from W rows.

    Returns out-of-fold R-squared per axis.  Held-out evaluation keeps the
    score honest when the embedding dimension rivals the number of grid
    positions (an in-sample fit would be trivially perfect there).
    """
    w = np.asarray(w, dtype=np.float64)
    count = n * n
    if w.shape[0] != count:
        raise ConfigError(f"expected {count} embedding rows, got {w.shape[0]}")
    idx = np.arange(count)
    targets = np.stack([idx % n, idx // n], axis=1).astype(np.float64)
    order = np.random.default_rng(seed).permutation(count)
    predictions = np.zeros_like(targets)
    design = np.concatenate([w, np.ones((count, 1))], axis=1)
    for f in range(folds):
        test = order[f::folds]
        train = np.setdiff1d(order, test)
        coef, *_ = np.linalg.lstsq(design[train], targets[train], rcond=None)
        predictions[test] = design[test] @ coef
    ss_res = ((targets - predictions) ** 2).sum(axis=0)
    ss_tot = ((targets - targets.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - ss_res / ss_tot
    return float(r2[0]), float(r2[1])


# ---------------------------------------------------------------------------
# Projection-quality metrics (nine normalized scores over 2D coordinates)
# ---------------------------------------------------------------------------

METRIC_NAMES = (
    "square_area_ratio",
    "square_side_uniformity",
    "square_corner_quality",
    "translation_length_ratio",
    "translation_parallelism",
    "reflection_accuracy",
    "reflection_axis_quality",
    "midpoint_collinearity",
    "midpoint_accuracy",
)


@dataclass
class ProjectionMetrics:
    scores: dict[str, float]
    degenerate: dict[str, int]
    samples: dict[str, int]


def _norm(v) -> float:
    return math.hypot(v[0], v[1])


def _polygon_area(points) -> float:
    area = 0.0
    for i in range(len(points)):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % len(points)]
        area += x0 * y1 - x1 * y0
    return abs(area) / 2.0


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def _square_scores(pts) -> tuple[dict[str, float], bool]:
    sides = [np.subtract(pts[(i + 1) % 4], pts[i]) for i in range(4)]
    lengths = [_norm(s) for s in sides]
    if min(lengths) == 0.0:
        return {m: 0.0 for m in METRIC_NAMES[:3]}, True
    mean_len = float(np.mean(lengths))
    area = _polygon_area(pts)
    target = mean_len * mean_len
    area_ratio = 0.0 if max(area, target) == 0 else min(area, target) / max(area, target)
    uniformity = _clamp01(1.0 - float(np.std(lengths)) / mean_len)
    deviations = []
    for i in range(4):
        incoming = -sides[(i - 1) % 4]
        outgoing = sides[i]
        cos = float(np.dot(incoming, outgoing)) / (_norm(incoming) * _norm(outgoing))
        angle = math.degrees(math.acos(max(-1.0, min(1.0, cos))))
        deviations.append(abs(angle - 90.0))
    corner = _clamp01(1.0 - float(np.mean(deviations)) / 90.0)
    return (
        {
            "square_area_ratio": _clamp01(area_ratio),
            "square_side_uniformity": uniformity,
            "square_corner_quality": corner,
        },
        False,
    )


def _translation_scores(pts) -> tuple[dict[str, float], bool]:
    a, b, c, d = pts
    seg1 = np.subtract(b, a)
    seg2 = np.subtract(d, c)
    l1, l2 = _norm(seg1), _norm(seg2)
    if l1 == 0.0 or l2 == 0.0:
        return {m: 0.0 for m in METRIC_NAMES[3:5]}, True
    ratio = min(l1, l2) / max(l1, l2)
    parallel = abs(float(np.dot(seg1, seg2))) / (l1 * l2)
    return (
        {
            "translation_length_ratio": _clamp01(ratio),
            "translation_parallelism": _clamp01(parallel),
        },
        False,
    )


def _reflect_point(p, a, b):
    axis = np.subtract(b, a)
    t = float(np.dot(np.subtract(p, a), axis)) / float(np.dot(axis, axis))
    foot = np.add(a, t * axis)
    return 2.0 * foot - np.asarray(p, dtype=np.float64)


def _point_line_distance(p, a, b) -> float:
    axis = np.subtract(b, a)
    rel = np.subtract(p, a)
    return abs(float(axis[0] * rel[1] - axis[1] * rel[0])) / _norm(axis)


def _reflection_scores(pts) -> tuple[dict[str, float], bool]:
    a, b, c, d = pts
    axis_len = _norm(np.subtract(b, a))
    pair_len = _norm(np.subtract(d, c))
    normalizer = (axis_len + pair_len) / 2.0
    if axis_len == 0.0 or normalizer == 0.0:
        return {m: 0.0 for m in METRIC_NAMES[5:7]}, True
    ideal = _reflect_point(c, a, b)
    accuracy = 1.0 - min(_norm(np.subtract(d, ideal)) / normalizer, 1.0)
    midpoint = (np.asarray(c, dtype=np.float64) + np.asarray(d, dtype=np.float64)) / 2.0
    axis_quality = 1.0 - min(_point_line_distance(midpoint, a, b) / normalizer, 1.0)
    return (
        {
            "reflection_accuracy": _clamp01(accuracy),
            "reflection_axis_quality": _clamp01(axis_quality),
        },
        False,
    )


def _midpoint_scores(pts) -> tuple[dict[str, float], bool]:
    a, b, c = pts
    pair_dists = [_norm(np.subtract(p, q)) for p, q in ((a, b), (a, c), (b, c))]
    longest = max(pair_dists)
    if longest == 0.0:
        return {m: 0.0 for m in METRIC_NAMES[7:9]}, True
    area = _polygon_area([a, b, c])
    collinearity = 1.0 - min(area / (0.5 * longest * longest), 1.0)
    normalizer = (_norm(np.subtract(b, a)) + _norm(np.subtract(c, b))) / 2.0
    if normalizer == 0.0:
        return {"midpoint_collinearity": _clamp01(collinearity), "midpoint_accuracy": 0.0}, True
    best = 0.0
    for mid, (p, q) in ((a, (b, c)), (b, (a, c)), (c, (a, b))):
        center = (np.asarray(p, dtype=np.float64) + np.asarray(q, dtype=np.float64)) / 2.0
        score = 1.0 - min(_norm(np.subtract(mid, center)) / normalizer, 1.0)
        best = max(best, score)
    return (
        {
            "midpoint_collinearity": _clamp01(collinearity),
            "midpoint_accuracy": _clamp01(best),
        },
        False,
    )


_SCORERS = {"S": _square_scores, "T": _translation_scores, "R": _reflection_scores, "M": _midpoint_scores}


def projection_metrics(
    coords2d: dict[str, tuple[float, float]],
    constraints: list[Constraint],
) -> ProjectionMetrics:
    """The nine normalized geometry scores of a 2D point projection.

    Each score lies in [0, 1], averaged over the applicable constraints;
    metrics with no applicable constraints are NaN.  Degenerate inputs (a
    zero-length segment) contribute a 0 score and are flagged.
    """
    sums = {m: 0.0 for m in METRIC_NAMES}
    counts = {m: 0 for m in METRIC_NAMES}
    degenerate = {m: 0 for m in METRIC_NAMES}
    for c in constraints:
        pts = [np.asarray(coords2d[v], dtype=np.float64) for v in c.args]
        scores, degen = _SCORERS[c.kind](pts)
        for name, value in scores.items():
            sums[name] += value
            counts[name] += 1
            if degen:
                degenerate[name] += 1
    final = {m: (sums[m] / counts[m] if counts[m] else math.nan) for m in METRIC_NAMES}
    return ProjectionMetrics(scores=final, degenerate=degenerate, samples=counts)


# ---------------------------------------------------------------------------
# MLP probes over constraint embeddings
# ---------------------------------------------------------------------------


@dataclass
class ProbeModel:
    """Two dense layers with a rectifier in between."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def logits(self, x: np.ndarray) -> np.ndarray:
        hidden = np.maximum(x @ self.w1.data.T + self.b1.data, 0.0)
        return hidden @ self.w2.data.T + self.b2.data

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class ProbeReport:
    accuracy: float
    balanced_accuracy: float
    per_class: dict[int, float]
    within_1: float | None = None
    within_2: float | None = None
    train_size: int = 0
    test_size: int = 0


def _split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = int(0.7 * n)
    n_val = int(0.1 * n)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


def _balance_classes(idx: np.ndarray, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    classes, counts = np.unique(labels[idx], return_counts=True)
    smallest = counts.min()
    kept = []
    for cls in classes:
        members = idx[labels[idx] == cls]
        kept.append(rng.choice(members, size=smallest, replace=False))
    out = np.concatenate(kept)
    rng.shuffle(out)
    return out


def train_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    *,
    hidden: int = 64,
    balance: bool = False,
    ordinal_tolerance: bool = False,
    epochs: int = 40,
    batch_size: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[ProbeModel, ProbeReport]:
    """Fit the two-layer probe on a 70/10/20 split of the embedding dataset.

    ``balance`` downsamples training classes to equal size (used for the
    satisfaction target); ``ordinal_tolerance`` additionally reports
    within-1 and within-2 accuracy (used for the iteration target).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ConfigError("probe training needs at least two classes")
    n_classes = int(classes.max()) + 1
    rng = np.random.default_rng(seed)
    train_idx, val_idx, test_idx = _split_indices(len(x), rng)
    if balance:
        train_idx = _balance_classes(train_idx, y, rng)
    if len(np.unique(y[train_idx])) < 2:
        raise ConfigError("training split collapsed to a single class")

    d = x.shape[1]
    model = ProbeModel(
        w1=Tensor(rng.normal(0, 1.0 / np.sqrt(d), (hidden, d)), requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(rng.normal(0, 1.0 / np.sqrt(hidden), (n_classes, hidden)), requires_grad=True),
        b2=Tensor(np.zeros(n_classes), requires_grad=True),
    )
    opt = AdamW(model.parameters(), lr=lr, weight_decay=1e-4)
    best_val, best_arrays = -1.0, None
    for _ in range(epochs):
        order = rng.permutation(train_idx)
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            opt.zero_grad()
            hidden_t = relu(linear(Tensor(x[batch]), model.w1, model.b1))
            logits = linear(hidden_t, model.w2, model.b2)
            loss = mean_all(softmax_cross_entropy(logits, y[batch]))
            loss.backward()
            opt.step()
        val_acc = _balanced_accuracy(y[val_idx], model.predict(x[val_idx]))
        if val_acc > best_val:
            best_val = val_acc
            best_arrays = {k: t.data.copy() for k, t in model.parameters().items()}
    for k, t in model.parameters().items():
        t.data[...] = best_arrays[k]

    predictions = model.predict(x[test_idx])
    truth = y[test_idx]
    per_class = {
        int(cls): float((predictions[truth == cls] == cls).mean())
        for cls in np.unique(truth)
    }
    report = ProbeReport(
        accuracy=float((predictions == truth).mean()),
        balanced_accuracy=_balanced_accuracy(truth, predictions),
        per_class=per_class,
        train_size=len(train_idx),
        test_size=len(test_idx),
    )
    if ordinal_tolerance:
        report.within_1 = float((np.abs(predictions - truth) <= 1).mean())
        report.within_2 = float((np.abs(predictions - truth) <= 2).mean())
    return model, report


def _balanced_accuracy(truth: np.ndarray, predicted: np.ndarray) -> float:
    scores = [(predicted[truth == cls] == cls).mean() for cls in np.unique(truth)]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def export_embeddings(vectors: np.ndarray, ids: list, path: str | Path) -> None:
    """One row per vector: identifier column(s) then the embedding values at
    17 significant digits (binary-exact float64 round-trip)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        id_cols = ids[0] if isinstance(ids[0], (tuple, list)) else (ids[0],)
        header = [f"id{i}" if len(id_cols) > 1 else "id" for i in range(len(id_cols))]
        writer.writerow(header + [f"e{j}" for j in range(vectors.shape[1])])
        for row_id, vec in zip(ids, vectors):
            cols = list(row_id) if isinstance(row_id, (tuple, list)) else [row_id]
            writer.writerow(cols + [f"{v:.17g}" for v in vec])


def import_embeddings(path: str | Path) -> tuple[list, np.ndarray]:
    """Inverse of :func:`export_embeddings`."""
    path = Path(path)
    ids, rows = [], []
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_ids = sum(1 for h in header if h.startswith("id"))
        for record in reader:
            key = record[:n_ids]
            ids.append(key[0] if n_ids == 1 else tuple(key))
            rows.append([float(v) for v in record[n_ids:]])
    return ids, np.asarray(rows, dtype=np.float64)
