"""Hierarchical feature extraction with one classification head per level.

Level l picks centroids by farthest point sampling over the previous level's
points, groups their k_l nearest neighbours, runs a shared MLP on
(relative position, previous feature) and max-pools each group. A global max
over the level's centroids gives the level feature, which an independent
fully-connected layer aligns to ``head_dim`` before the level's classifier.

The deepest level is the teacher; distillation is KL(teacher || student) with
the teacher held constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInput, ShapeError
from .geometry import batch_fps, batch_knn, farthest_from_origin
from .nn import MLP, Linear, Module


@dataclass(frozen=True)
class HFEConfig:
    levels: int = 3
    k_per_level: Tuple[int, ...] = (8, 16, 24)
    level_widths: Tuple[int, ...] = (64, 128, 256)
    head_dim: int = 256
    classes: int = 8
    # centroids per level as divisors of the input size: level l keeps N // 2**l
    centroid_ratio: int = 2
    parts: int = 2
    seg_hidden: int = 64

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidInput("need at least one level")
        if len(self.k_per_level) != self.levels or len(self.level_widths) != self.levels:
            raise InvalidInput("k_per_level and level_widths need one entry per level")
        if any(b <= a for a, b in zip(self.k_per_level, self.k_per_level[1:])):
            raise InvalidInput(f"k_per_level must increase strictly: {self.k_per_level}")
        if self.classes < 1 or self.head_dim < 1:
            raise InvalidInput("classes and head_dim must be positive")

    def centroid_counts(self, n: int) -> List[int]:
        counts, prev = [], n
        for l in range(self.levels):
            m = max(1, n // self.centroid_ratio ** (l + 1))
            if l + 1 < self.levels:
                m = max(m, self.k_per_level[l + 1])
            m = min(m, prev)
            counts.append(m)
            prev = m
        return counts


@dataclass
class LevelOutputs:
    logits: List[Tensor]
    aligned_features: List[Tensor]
    centers: List[Tensor] = field(default_factory=list)
    point_features: List[Tensor] = field(default_factory=list)
    radii: List[np.ndarray] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.logits)


@dataclass
class LossBreakdown:
    rec: float
    ce_per_level: Tuple[float, ...]
    kl_per_level: Tuple[float, ...]
    total: float
    weights: Tuple[float, float, float]
    ce_mask: Tuple[float, ...] = ()
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def identity_residual(self) -> float:
        """|total - (a*rec + b*g*sum(ce) + b*(1-g)*sum(kl))|."""
        a, b, g = self.weights
        mask = self.ce_mask or (1.0,) * len(self.ce_per_level)
        ce = math.fsum(m * c for m, c in zip(mask, self.ce_per_level))
        kl = math.fsum(self.kl_per_level)
        return abs(self.total - (a * self.rec + b * g * ce + b * (1 - g) * kl))


class SetAbstraction(Module):
    def __init__(self, in_features: int, width: int, k: int, rng):
        super().__init__()
        self.k = k
        self.mlp = self.child("mlp", MLP((3 + in_features, width, width), rng))

    def __call__(self, points: Tensor, feats: Optional[Tensor], m: int):
        b, n, _ = points.shape
        start = farthest_from_origin(points.data)
        cidx = batch_fps(points.data, m, start)
        centers = ad.batch_gather(points, cidx)
        k = min(self.k, n)
        nidx = batch_knn(centers.data, points.data, k)
        rel = ad.batch_gather(points, nidx) - centers.reshape(b, m, 1, 3)
        inp = rel if feats is None else ad.concat([rel, ad.batch_gather(feats, nidx)], axis=-1)
        pooled = ad.max_over_set(self.mlp(inp), axis=2)
        radius = np.sqrt((rel.data ** 2).sum(-1)).max(-1)
        return centers, pooled, radius


class Head(Module):
    def __init__(self, width: int, head_dim: int, classes: int, rng):
        super().__init__()
        self.align = self.child("align", Linear(width, head_dim, rng))
        self.classify = self.child("classify", Linear(head_dim, classes, rng))

    def __call__(self, level_feature: Tensor):
        z = ad.relu(self.align(level_feature))
        return z, self.classify(z)


class HFE(Module):
    """Cascaded set-abstraction levels, each with its own aligned head."""

    def __init__(self, cfg: HFEConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        prev = 0
        self.levels, self.heads = [], []
        for l, (k, w) in enumerate(zip(cfg.k_per_level, cfg.level_widths)):
            self.levels.append(self.child(f"sa{l + 1}", SetAbstraction(prev, w, k, rng)))
            self.heads.append(self.child(f"head{l + 1}", Head(w, cfg.head_dim, cfg.classes, rng)))
            prev = w

    def __call__(self, x) -> LevelOutputs:
        return hfe_forward(self, x)


def _points3(x) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ShapeError(f"expected (B, N, 3) points, got {x.shape}")
    return x


def hfe_forward(model: HFE, x) -> LevelOutputs:
    """Run every level and head; logits are invariant to input point order."""
    x = _points3(x)
    cfg = model.cfg
    n = x.shape[1]
    if n < cfg.k_per_level[-1]:
        raise InvalidInput(f"need at least k_L={cfg.k_per_level[-1]} points, got {n}")
    counts = cfg.centroid_counts(n)
    pts, feats = x, None
    out = LevelOutputs([], [])
    for sa, head, m in zip(model.levels, model.heads, counts):
        pts, feats, radius = sa(pts, feats, m)
        z, logits = head(ad.max_over_set(feats, axis=1))
        out.logits.append(logits)
        out.aligned_features.append(z)
        out.centers.append(pts)
        out.point_features.append(feats)
        out.radii.append(radius)
    return out


# losses ------------------------------------------------------------------------

def _onehot(y, classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise InvalidInput(f"labels must lie in [0, {classes})")
    return np.eye(classes)[y]


def cross_entropy(logits: Tensor, y) -> Tensor:
    """Mean softmax cross-entropy; ``logits`` (..., C) and integer ``y`` (...)."""
    logp = ad.log_softmax(logits)
    onehot = _onehot(y, logits.shape[-1])
    if onehot.shape != logits.shape:
        raise ShapeError(f"labels {np.shape(y)} do not match logits {logits.shape}")
    count = int(np.prod(logits.shape[:-1]))
    return ad.sum(logp * onehot) * (-1.0 / count)


KL_DIRECTIONS = ("teacher_student", "student_teacher")


def kl_to_teacher(teacher: Tensor, student: Tensor, temperature: float = 1.0,
                  direction: str = "teacher_student") -> Tensor:
    """Batch-mean KL between softened teacher and student, teacher held constant.

    ``teacher_student`` is KL(p_teacher || p_student), the usual distillation
    direction; ``student_teacher`` swaps the arguments.
    """
    if direction not in KL_DIRECTIONS:
        raise InvalidInput(f"unknown KL direction {direction!r}")
    if not temperature > 0:
        raise InvalidInput(f"temperature must be positive, got {temperature}")
    inv = 1.0 / temperature
    t = ad.log_softmax(ad.detach(teacher) * inv if inv != 1 else ad.detach(teacher)).data
    logq = ad.log_softmax(student * inv if inv != 1 else student)
    count = int(np.prod(student.shape[:-1]))
    if direction == "student_teacher":
        q = ad.exp(logq)
        return ad.sum(q * (logq - t)) * (1.0 / count)
    p = np.exp(t)
    const = float((p * t).sum()) / count
    return ad.sum(logq * p) * (-1.0 / count) + const


def dsn_loss(outs: LevelOutputs, y, level_weights: Optional[Sequence[float]] = None):
    """Sum of per-level cross-entropies; returns (loss tensor, per-level values)."""
    ces = [cross_entropy(lg, y) for lg in outs.logits]
    weights = level_weights or (1.0,) * len(ces)
    total = None
    for w, ce in zip(weights, ces):
        if w == 0:
            continue
        term = ce if w == 1 else ce * w
        total = term if total is None else total + term
    if total is None:
        total = ad.Tensor(0.0)
    return total, tuple(ce.item() for ce in ces)


def hsd_kl(outs: LevelOutputs, codes: Optional[List[Tensor]] = None, temperature: float = 1.0,
           direction: str = "teacher_student"):
    """Sum over students of KL(teacher || student); returns (tensor, per-level values).

    ``codes`` replaces the logits as the distributions being matched (the
    segmentation variant distils softmaxed shape codes).
    """
    dists = codes if codes is not None else outs.logits
    if len(dists) < 2:
        raise InvalidInput("distillation needs at least two levels")
    teacher = dists[-1]
    kls = [kl_to_teacher(teacher, s, temperature, direction) for s in dists[:-1]]
    total = kls[0]
    for kl in kls[1:]:
        total = total + kl
    return total, tuple(kl.item() for kl in kls)


def joint_loss(rec, outs: LevelOutputs, y, weights=(1.0, 0.001, 0.8),
               ce_mask: Optional[Sequence[float]] = None, distill: bool = True,
               codes: Optional[List[Tensor]] = None, ce_terms=None, kl_temperature: float = 1.0,
               kl_direction: str = "teacher_student") -> LossBreakdown:
    """``a*rec + b*g*sum(ce) + b*(1-g)*sum(kl)``.

    ``ce_mask`` selects which levels are supervised (the single-head baseline
    uses only the teacher). ``ce_terms`` lets the segmentation path supply its
    own per-level cross-entropies.
    """
    a, b, g = (float(w) for w in weights)
    if not all(math.isfinite(w) for w in (a, b, g)) or not 0.0 <= g <= 1.0:
        raise InvalidInput(f"bad loss weights {weights}")
    rec = ad.as_tensor(rec)
    levels = outs.levels
    mask = tuple(float(m) for m in (ce_mask or (1.0,) * levels))
    if ce_terms is None:
        ce_terms = [cross_entropy(lg, y) for lg in outs.logits]
    ce_sum = None
    for m, ce in zip(mask, ce_terms):
        if m == 0:
            continue
        term = ce if m == 1 else ce * m
        ce_sum = term if ce_sum is None else ce_sum + term
    total = rec * a if a != 1 else rec
    if ce_sum is not None and b * g != 0:
        total = total + ce_sum * (b * g)
    kl_vals: Tuple[float, ...] = ()
    if distill and levels >= 2:
        kl_sum, kl_vals = hsd_kl(outs, codes, kl_temperature, kl_direction)
        total = total + kl_sum * (b * (1.0 - g))
    return LossBreakdown(
        rec=rec.item(),
        ce_per_level=tuple(ce.item() for ce in ce_terms),
        kl_per_level=kl_vals,
        total=total.item(),
        weights=(a, b, g),
        ce_mask=mask,
        tensor=total,
    )


# inference ---------------------------------------------------------------------

def _probs(logits: Tensor) -> np.ndarray:
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(outs: LevelOutputs, mode: str = "teacher") -> np.ndarray:
    """Class labels from the teacher, one level (``"level_2"``), or the mean ensemble."""
    if mode == "teacher":
        probs = _probs(outs.logits[-1])
    elif mode == "mean_ensemble":
        probs = np.mean([_probs(lg) for lg in outs.logits], axis=0)
    elif mode.startswith("level_"):
        try:
            l = int(mode.split("_", 1)[1])
        except ValueError:
            raise InvalidInput(f"bad mode {mode!r}") from None
        if not 1 <= l <= outs.levels:
            raise InvalidInput(f"level {l} out of range 1..{outs.levels}")
        probs = _probs(outs.logits[l - 1])
    else:
        raise InvalidInput(f"unknown mode {mode!r}")
    return np.argmax(probs, axis=-1)


# part segmentation -------------------------------------------------------------

@dataclass
class SegOutputs:
    point_logits: List[Tensor]
    shape_codes: List[Tensor]
    levels: LevelOutputs


class SegHead(Module):
    """Per-point part logits from the nearest centroid's feature and the shape code."""

    def __init__(self, width: int, head_dim: int, hidden: int, parts: int, rng):
        super().__init__()
        self.from_point = self.child("from_point", Linear(width + 3, hidden, rng))
        self.from_code = self.child("from_code", Linear(head_dim, hidden, rng, bias=False))
        self.out = self.child("out", Linear(hidden, parts, rng))

    def __call__(self, x: Tensor, centers: Tensor, feats: Tensor, code: Tensor) -> Tensor:
        b, n, _ = x.shape
        nearest = batch_knn(x.data, centers.data, 1)[..., 0]
        near_c = ad.batch_gather(centers, nearest)
        inp = ad.concat([ad.batch_gather(feats, nearest), x - near_c], axis=-1)
        h = ad.relu(self.from_point(inp) + self.from_code(code).reshape(b, 1, -1))
        return self.out(h)


class HFESeg(Module):
    """HFE backbone plus a segmentation head per level."""

    def __init__(self, cfg: HFEConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.backbone = self.child("backbone", HFE(cfg, rng))
        self.seg_heads = [
            self.child(f"seg{l + 1}", SegHead(w, cfg.head_dim, cfg.seg_hidden, cfg.parts, rng))
            for l, w in enumerate(cfg.level_widths)
        ]

    def __call__(self, x) -> SegOutputs:
        return seg_forward(self, x)


def seg_forward(model: HFESeg, x) -> SegOutputs:
    x = _points3(x)
    outs = hfe_forward(model.backbone, x)
    logits = [
        head(x, c, f, z) for head, c, f, z in
        zip(model.seg_heads, outs.centers, outs.point_features, outs.aligned_features)
    ]
    return SegOutputs(logits, list(outs.aligned_features), outs)


def seg_loss(seg: SegOutputs, point_labels, rec=0.0, weights=(1.0, 0.001, 0.8),
             ce_mask=None, distill=True) -> LossBreakdown:
    """Joint loss for segmentation: per-point CE per level, KL over shape codes."""
    ces = [cross_entropy(lg, point_labels) for lg in seg.point_logits]
    return joint_loss(rec, seg.levels, None, weights, ce_mask=ce_mask, distill=distill,
                      codes=seg.shape_codes, ce_terms=ces)


def part_ious(pred: np.ndarray, truth: np.ndarray, parts: int) -> np.ndarray:
    """IoU per part for one instance; a part absent from both counts as 1."""
    out = np.empty(parts)
    for p in range(parts):
        inter = np.sum((pred == p) & (truth == p))
        union = np.sum((pred == p) | (truth == p))
        out[p] = 1.0 if union == 0 else inter / union
    return out
