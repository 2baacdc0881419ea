"""Joint training of the completion and recognition streams, evaluation and ablations.

One step: pick a scattered view per object, reconstruct it, score the
reconstruction against the complete cloud, classify (or segment) the
reconstruction and back-propagate the joint loss through both streams.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .corpus import COMPOSITE_CLASSES, DENSE_POINTS, DatasetSplit, gen_shape
from .downstream import (HFE, KL_DIRECTIONS, HFEConfig, HFESeg, LevelOutputs, LossBreakdown,
                         joint_loss, kl_to_teacher, part_ious, predict)
from .errors import InvalidInput, NumericsError
from .geometry import batch_knn, chamfer, fps, nearest_map
from .infoplane import MITrace, level_trace
from .nn import Module
from .optim import Adam, cosine_lr, step_decay_lr
from .scatter import ScatterConfig, multi_view
from .upstream import Upstream, UpstreamConfig, rec_loss

log = logging.getLogger(__name__)

MODES = ("classify", "segment")
SUPERVISION = ("all", "teacher")
SCHEDULES = ("step", "cosine")
OBJECTIVES = ("joint", "dsn")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr_init: float = 1e-3
    schedule: str = "step"
    decay_factor: float = 0.8
    decay_every: int = 50
    # cosine floor as a fraction of lr_init
    lr_min_ratio: float = 0.005
    alpha: float = 1.0
    beta: float = 0.001
    gamma: float = 0.8
    views: int = 8
    seed: int = 0
    mode: str = "classify"
    # "teacher" trains only the deepest head (single-head baseline)
    supervision: str = "all"
    distill: bool = True
    kl_temperature: float = 1.0
    # "teacher_student" is KL(teacher || student); the teacher is detached either way
    kl_direction: str = "teacher_student"
    # "dsn" builds rec + beta * sum(ce) directly instead of going through gamma
    objective: str = "joint"
    detach_recon: bool = False
    weight_decay: float = 0.0
    trace_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.batch_size < 1 or self.views < 1:
            raise InvalidInput("batch_size and views must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInput(f"gamma must lie in [0, 1], got {self.gamma}")
        if not all(math.isfinite(w) for w in (self.alpha, self.beta, self.gamma, self.lr_init)):
            raise InvalidInput("weights and lr must be finite")
        if not self.kl_temperature > 0:
            raise InvalidInput("kl_temperature must be positive")
        for name, value, allowed in (("mode", self.mode, MODES),
                                     ("supervision", self.supervision, SUPERVISION),
                                     ("schedule", self.schedule, SCHEDULES),
                                     ("objective", self.objective, OBJECTIVES),
                                     ("kl_direction", self.kl_direction, KL_DIRECTIONS)):
            if value not in allowed:
                raise InvalidInput(f"{name} must be one of {allowed}, got {value!r}")

    @property
    def weights(self) -> Tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def lr(self, epoch: int) -> float:
        if self.schedule == "step":
            return step_decay_lr(epoch, self.lr_init, self.decay_factor, self.decay_every)
        return cosine_lr(epoch, self.epochs, self.lr_init, self.lr_init * self.lr_min_ratio)


# model ---------------------------------------------------------------------------

class JointModel(Module):
    """Upstream completion network followed by the hierarchical downstream."""

    def __init__(self, up_cfg: UpstreamConfig, down_cfg: HFEConfig, seed: int,
                 mode: str = "classify"):
        super().__init__()
        if mode not in MODES:
            raise InvalidInput(f"unknown mode {mode!r}")
        rng = np.random.default_rng(seed)
        self.mode = mode
        self.up_cfg, self.down_cfg = up_cfg, down_cfg
        self.up = self.child("up", Upstream(up_cfg, rng))
        self.down = self.child("down", HFESeg(down_cfg, rng) if mode == "segment"
                               else HFE(down_cfg, rng))

    def levels(self, out) -> LevelOutputs:
        return out.levels if self.mode == "segment" else out

    def infer(self, x) -> Tuple[np.ndarray, LevelOutputs]:
        """Reconstruction and level outputs with nothing recorded."""
        recon, out = self.infer_full(x)
        return recon, self.levels(out)

    def infer_full(self, x):
        if ad.active_tape() is not None:
            with _NoTape():
                return self.infer_full(x)
        recon = self.up(x)
        return recon.data, self.down(recon)

    def config_dict(self) -> dict:
        return {"mode": self.mode, "upstream": asdict(self.up_cfg),
                "downstream": asdict(self.down_cfg)}

    @classmethod
    def from_config_dict(cls, d: dict, seed: int = 0) -> "JointModel":
        up = UpstreamConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in d["upstream"].items()})
        down = HFEConfig(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in d["downstream"].items()})
        return cls(up, down, seed, d["mode"])


class _NoTape:
    """Temporarily hide the active tapes of this thread."""

    def __enter__(self):
        stack = ad._tape_stack()
        self.saved = list(stack)
        stack.clear()

    def __exit__(self, *exc):
        ad._tape_stack().extend(self.saved)
        return False


# data ----------------------------------------------------------------------------

@dataclass
class PreparedData:
    """Scattered views, complete targets and labels, as dense arrays."""
    train_x: np.ndarray            # (n, views, S, 3)
    train_gt: np.ndarray           # (n, N, 3)
    train_y: np.ndarray            # (n,)
    test_x: np.ndarray             # (m, S, 3)
    test_gt: np.ndarray            # (m, N, 3)
    test_y: np.ndarray             # (m,)
    classes: int
    train_parts: Optional[np.ndarray] = None   # (n, N) part labels of the targets
    test_parts: Optional[np.ndarray] = None
    # test rows are object-major: views of object i are rows i*test_views ...
    test_views: int = 1

    @property
    def target_points(self) -> int:
        return self.train_gt.shape[1]

    def subset_classes(self, keep: Sequence[int]) -> "PreparedData":
        tr = np.isin(self.train_y, keep)
        te = np.isin(self.test_y, keep)
        return PreparedData(
            self.train_x[tr], self.train_gt[tr], self.train_y[tr], self.test_x[te],
            self.test_gt[te], self.test_y[te], self.classes,
            None if self.train_parts is None else self.train_parts[tr],
            None if self.test_parts is None else self.test_parts[te], self.test_views)

    def trace_rows(self) -> np.ndarray:
        """One test row per object (its first view), used for per-epoch traces."""
        return np.arange(0, self.test_x.shape[0], self.test_views)


def _view_seed(base: int, shape_seed: int, views: int) -> int:
    return base + shape_seed * views


def _object_arrays(spec, scatter: ScatterConfig, target_points: int, views: int, view0: int):
    dense = gen_shape(spec, scatter.source_size)
    cfg = replace(scatter, rng_seed=_view_seed(scatter.rng_seed, spec.rng_seed, views) + view0)
    xs = np.stack([v.points for v in multi_view(dense, cfg, views)])
    keep = fps(dense, target_points, start=0)
    gt = dense.subset(keep)
    labels = gt.labels if gt.labels is not None else np.zeros(target_points, dtype=np.int64)
    return xs, gt.points, labels


def prepare_data(split: DatasetSplit, scatter: ScatterConfig, target_points: int,
                 views: int = 8, classes: Optional[int] = None,
                 test_views: int = 1) -> PreparedData:
    """Generate dense clouds, scatter every training object ``views`` times and pick targets.

    Targets are ``target_points`` FPS samples of the dense cloud. Every test
    object is scattered ``test_views`` times; each view is scored as one sample.
    """
    if scatter.source_size != DENSE_POINTS:
        log.info("dense source size %d differs from the default %d",
                 scatter.source_size, DENSE_POINTS)
    tr = [_object_arrays(s, scatter, target_points, views, 0) for s in split.train]
    te = [_object_arrays(s, scatter, target_points, test_views, 0) for s in split.test]
    ncls = classes or (1 + max(s.class_id for s in split.train + split.test))
    return PreparedData(
        train_x=np.stack([t[0] for t in tr]), train_gt=np.stack([t[1] for t in tr]),
        train_y=np.array([s.class_id for s in split.train], dtype=np.int64),
        test_x=np.concatenate([t[0] for t in te]),
        test_gt=np.repeat(np.stack([t[1] for t in te]), test_views, axis=0),
        test_y=np.repeat([s.class_id for s in split.test], test_views).astype(np.int64),
        classes=ncls,
        train_parts=np.stack([t[2] for t in tr]).astype(np.int64),
        test_parts=np.repeat(np.stack([t[2] for t in te]), test_views, axis=0).astype(np.int64),
        test_views=test_views)


def save_prepared(path, data: PreparedData):
    np.savez(path, **{k: v for k, v in asdict(data).items() if v is not None})


def load_prepared(path) -> PreparedData:
    with np.load(path) as z:
        d = {k: z[k] for k in z.files}
    d["classes"] = int(d["classes"])
    d["test_views"] = int(d.get("test_views", 1))
    return PreparedData(**d)


# training ------------------------------------------------------------------------

STEP_FIELDS_FIXED = ("step", "epoch", "rec")


def step_fields(levels: int) -> Tuple[str, ...]:
    return (STEP_FIELDS_FIXED + tuple(f"ce{l + 1}" for l in range(levels))
            + tuple(f"kl{l + 1}" for l in range(levels - 1)) + ("total", "lr"))


@dataclass
class LevelMetric:
    epoch: int
    level: int
    oa: float
    macc: float
    ce: float
    kl_gap: float


LEVEL_METRIC_FIELDS = ("epoch", "level", "oa", "macc", "ce", "kl_gap")


@dataclass
class TrainResult:
    model: JointModel
    steps: List[dict]
    traces: List[MITrace]
    level_metrics: List[LevelMetric]
    checkpoint_hash: str
    config: TrainConfig
    max_identity_residual: float = 0.0
    checkpoint_path: Optional[str] = None


def _ce_mask(tcfg: TrainConfig, levels: int) -> Tuple[float, ...]:
    if tcfg.supervision == "teacher":
        return (0.0,) * (levels - 1) + (1.0,)
    return (1.0,) * levels


def _dsn_breakdown(rec: ad.Tensor, outs: LevelOutputs, ce_terms, mask, weights,
                   tcfg: TrainConfig) -> LossBreakdown:
    """rec + beta * sum(ce): the deep-supervision objective written out directly."""
    a, b, _ = weights
    ce_sum = None
    for m, ce in zip(mask, ce_terms):
        if m == 0:
            continue
        term = ce if m == 1 else ce * m
        ce_sum = term if ce_sum is None else ce_sum + term
    total = rec * a if a != 1 else rec
    if ce_sum is not None and b != 0:
        total = total + ce_sum * b
    kls: Tuple[float, ...] = ()
    if tcfg.distill and outs.levels >= 2:
        # diagnostics only, on detached logits
        t = ad.detach(outs.logits[-1])
        kls = tuple(kl_to_teacher(t, ad.detach(s), tcfg.kl_temperature, tcfg.kl_direction).item()
                    for s in outs.logits[:-1])
    return LossBreakdown(rec.item(), tuple(c.item() for c in ce_terms), kls, total.item(),
                         (float(a), float(b), 1.0), tuple(mask), total)


def _forward_loss(model: JointModel, tcfg: TrainConfig, x, gt, y, gt_parts,
                  stage: str = "joint") -> LossBreakdown:
    from .downstream import cross_entropy

    levels = model.down_cfg.levels
    mask = _ce_mask(tcfg, levels)
    weights = tcfg.weights
    if stage == "down":
        # downstream alone on complete clouds
        rec = ad.Tensor(0.0)
        recon = ad.Tensor(gt)
    else:
        recon = model.up(x)
        rec = rec_loss(recon, gt)
        if stage == "up":
            return LossBreakdown(rec.item(), (), (), rec.item(), (1.0, 0.0, tcfg.gamma),
                                 (), rec)
    down_in = ad.detach(recon) if tcfg.detach_recon else recon
    out = model.down(down_in)
    outs = model.levels(out)
    if model.mode == "segment":
        # parts for reconstructed points come from their nearest target point
        near = batch_knn(recon.data, gt, 1)[..., 0]
        labels = np.take_along_axis(gt_parts, near, axis=1)
        ce_terms = [cross_entropy(lg, labels) for lg in out.point_logits]
        codes = out.shape_codes
    else:
        ce_terms = [cross_entropy(lg, y) for lg in outs.logits]
        codes = None
    if tcfg.objective == "dsn":
        return _dsn_breakdown(rec, outs, ce_terms, mask, weights, tcfg)
    return joint_loss(rec, outs, y, weights, ce_mask=mask, distill=tcfg.distill,
                      codes=codes, ce_terms=ce_terms, kl_temperature=tcfg.kl_temperature,
                      kl_direction=tcfg.kl_direction)


def _row(step: int, epoch: int, lb: LossBreakdown, levels: int, lr: float) -> dict:
    row = {"step": step, "epoch": epoch, "rec": lb.rec}
    for l in range(levels):
        row[f"ce{l + 1}"] = lb.ce_per_level[l] if l < len(lb.ce_per_level) else ""
    for l in range(levels - 1):
        row[f"kl{l + 1}"] = lb.kl_per_level[l] if l < len(lb.kl_per_level) else ""
    row["total"] = lb.total
    row["lr"] = lr
    return row


def _batches(rng: np.random.Generator, n: int, size: int):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_model(data: PreparedData, up_cfg: UpstreamConfig, down_cfg: HFEConfig,
                tcfg: TrainConfig, out_dir: Optional[str] = None, stage: str = "joint",
                model: Optional[JointModel] = None, trace: bool = True) -> TrainResult:
    """Train on prepared arrays.

    ``stage`` is ``"joint"`` (both streams), ``"up"`` (reconstruction only) or
    ``"down"`` (downstream only, fed the complete target clouds). A passed-in
    ``model`` is trained in place; only the parameters of the trained stage
    are updated.
    """
    if stage not in ("joint", "up", "down"):
        raise InvalidInput(f"unknown stage {stage!r}")
    if data.target_points != up_cfg.target_points:
        raise InvalidInput(f"data has {data.target_points} target points, "
                           f"upstream produces {up_cfg.target_points}")
    if down_cfg.classes < data.classes:
        raise InvalidInput(f"downstream has {down_cfg.classes} classes, data has {data.classes}")
    if model is None:
        model = JointModel(up_cfg, down_cfg, tcfg.seed, tcfg.mode)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng([tcfg.seed, 1])
    if stage == "up":
        params = model.up.parameters()
    elif stage == "down":
        params = model.down.parameters()
    else:
        params = model.parameters()
    opt = Adam(params, weight_decay=tcfg.weight_decay)
    levels = down_cfg.levels
    steps: List[dict] = []
    traces: List[MITrace] = []
    metrics: List[LevelMetric] = []
    worst = 0.0
    step = 0
    n = data.train_x.shape[0]
    last_good = model.state_dict()
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr(epoch)
        for idx in _batches(rng, n, tcfg.batch_size):
            view = rng.integers(data.train_x.shape[1], size=idx.shape[0])
            x = data.train_x[idx, view]
            try:
                with ad.Tape() as tape:
                    lb = _forward_loss(model, tcfg, x, data.train_gt[idx], data.train_y[idx],
                                       data.train_parts[idx] if data.train_parts is not None
                                       else None, stage)
                    opt.zero_grad()
                    tape.backward(lb.tensor)
                    opt.step(lr)
                for p in params:
                    if not np.all(np.isfinite(p.data)):
                        raise NumericsError(f"non-finite parameter after step {step}")
            except NumericsError:
                model.load_state_dict(last_good)
                if out_dir:
                    _save(model, tcfg, os.path.join(out_dir, "last_good.ckpt"), stage)
                log.error("numerics failure at epoch %d step %d; last good state kept",
                          epoch, step)
                raise
            last_good = model.state_dict()
            if stage != "up":
                worst = max(worst, lb.identity_residual())
            steps.append(_row(step, epoch, lb, levels, lr))
            step += 1
        if trace and stage != "up" and model.mode == "classify" and (epoch % tcfg.trace_every == 0 or epoch == tcfg.epochs - 1):
            t, m = _trace(model, data, epoch)
            traces.extend(t)
            metrics.extend(m)
    path = os.path.join(out_dir, "model.ckpt") if out_dir else None
    digest = _save(model, tcfg, path, stage)
    result = TrainResult(model, steps, traces, metrics, digest, tcfg, worst, path)
    if out_dir:
        write_logs(result, out_dir)
    return result


def _trace(model: JointModel, data: PreparedData, epoch: int):
    """MI traces and per-level accuracy on the test inputs."""
    rows = data.trace_rows()
    recon, outs = model.infer(data.test_x[rows])
    y = data.test_y[rows]
    traces = level_trace(epoch, [z.data for z in outs.aligned_features],
                         [lg.data for lg in outs.logits], y)
    metrics = []
    for l, tr in enumerate(traces):
        pred = predict(outs, f"level_{l + 1}")
        oa, macc = accuracy(pred, y, data.classes, warn=False)
        metrics.append(LevelMetric(epoch, l + 1, oa, macc, tr.ce, tr.kl_gap_to_teacher))
    return traces, metrics


def _save(model: JointModel, tcfg: TrainConfig, path: Optional[str], stage: str) -> str:
    meta = {"model": model.config_dict(), "train": asdict(tcfg), "stage": stage}
    state = model.state_dict()
    if path:
        return checkpoint.save(path, state, meta)
    return checkpoint.digest(state, meta)


def load_model(path) -> Tuple[JointModel, dict]:
    params, meta = checkpoint.load(path)
    model = JointModel.from_config_dict(meta["model"])
    model.load_state_dict(params)
    return model, meta


def write_logs(result: TrainResult, out_dir: str):
    levels = result.model.down_cfg.levels
    with open(os.path.join(out_dir, "steps.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=step_fields(levels))
        w.writeheader()
        w.writerows(result.steps)
    from .infoplane import write_traces
    write_traces(os.path.join(out_dir, "epochs.csv"), result.traces)
    with open(os.path.join(out_dir, "levels.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEVEL_METRIC_FIELDS)
        w.writeheader()
        w.writerows(asdict(m) for m in result.level_metrics)


def train(split: DatasetSplit, scatter: ScatterConfig, tcfg: TrainConfig,
          up_cfg: Optional[UpstreamConfig] = None, down_cfg: Optional[HFEConfig] = None,
          out_dir: Optional[str] = None) -> TrainResult:
    """Prepare data from ``split`` and run joint training."""
    up_cfg = up_cfg or UpstreamConfig()
    down_cfg = down_cfg or HFEConfig()
    data = prepare_data(split, scatter, up_cfg.target_points, tcfg.views)
    if tcfg.mode == "segment":
        data = data.subset_classes(COMPOSITE_CLASSES)
    return train_model(data, up_cfg, down_cfg, tcfg, out_dir)


def train_two_stage(data: PreparedData, up_cfg: UpstreamConfig, down_cfg: HFEConfig,
                    tcfg: TrainConfig, trace: bool = False) -> TrainResult:
    """Upstream trained on reconstruction alone, then the downstream on complete clouds."""
    model = JointModel(up_cfg, down_cfg, tcfg.seed, tcfg.mode)
    up = train_model(data, up_cfg, down_cfg, tcfg, stage="up", model=model, trace=False)
    down = train_model(data, up_cfg, down_cfg, tcfg, stage="down", model=model, trace=trace)
    digest = _save(model, tcfg, None, "two_stage")
    return TrainResult(model, up.steps + down.steps, down.traces, down.level_metrics,
                       digest, tcfg, down.max_identity_residual)


# evaluation ----------------------------------------------------------------------

@dataclass
class EvalReport:
    oa: float
    macc: float
    cd_x1000: float
    per_level: List[Tuple[float, float]] = field(default_factory=list)
    miou: Optional[float] = None
    ciou: Optional[float] = None

    def as_percent(self) -> dict:
        d = {"OA": 100 * self.oa, "mAcc": 100 * self.macc, "CDx1000": self.cd_x1000}
        for l, (oa, macc) in enumerate(self.per_level):
            d[f"L{l + 1}_OA"] = 100 * oa
            d[f"L{l + 1}_mAcc"] = 100 * macc
        if self.miou is not None:
            d["mIOU"] = 100 * self.miou
            d["cIOU"] = 100 * self.ciou
        return d


def accuracy(pred, y, classes: int, warn: bool = True) -> Tuple[float, float]:
    """Overall accuracy and mean per-class accuracy over the classes present in ``y``."""
    pred = np.asarray(pred)
    y = np.asarray(y)
    if y.size == 0:
        raise InvalidInput("no samples to score")
    oa = float(np.mean(pred == y))
    per = []
    for c in range(classes):
        sel = y == c
        if not sel.any():
            if warn:
                warnings.warn(f"class {c} absent from the test set; excluded from mAcc")
            continue
        per.append(np.mean(pred[sel] == c))
    return oa, float(np.mean(per))


def _batched_infer(model: JointModel, x: np.ndarray, batch: int = 64):
    recons, outs = [], []
    for s in range(0, x.shape[0], batch):
        r, o = model.infer_full(x[s:s + batch])
        recons.append(r)
        outs.append(o)
    return np.concatenate(recons), outs


def evaluate(model: JointModel, data: PreparedData, mode: Optional[str] = None,
             inference: str = "teacher") -> EvalReport:
    """Score ``model`` on the test part of ``data``."""
    mode = mode or model.mode
    recon, chunks = _batched_infer(model, data.test_x)
    cd = float(np.mean([chamfer(r, g) for r, g in zip(recon, data.test_gt)])) * 1000.0
    if mode == "segment":
        return _evaluate_seg(model, data, recon, chunks, cd)
    levels = model.down_cfg.levels
    y = data.test_y
    per_level = []
    for l in range(levels):
        pred = np.concatenate([predict(model.levels(o), f"level_{l + 1}") for o in chunks])
        per_level.append(accuracy(pred, y, data.classes, warn=False))
    pred = np.concatenate([predict(model.levels(o), inference) for o in chunks])
    oa, macc = accuracy(pred, y, data.classes)
    return EvalReport(oa, macc, cd, per_level)


def _evaluate_seg(model, data, recon, chunks, cd) -> EvalReport:
    parts = model.down_cfg.parts
    logits = np.concatenate([o.point_logits[-1].data for o in chunks])
    pred = np.argmax(logits, axis=-1)
    inst, per_class = [], {}
    for i in range(recon.shape[0]):
        truth = data.test_parts[i][nearest_map(recon[i], data.test_gt[i])]
        ious = part_ious(pred[i], truth, parts)
        inst.append(ious.mean())
        for p in range(parts):
            per_class.setdefault((int(data.test_y[i]), p), []).append(ious[p])
    miou = float(np.mean(inst))
    ciou = float(np.mean([np.mean(v) for v in per_class.values()]))
    return EvalReport(float("nan"), float("nan"), cd, [], miou, ciou)


def random_labeler_miou(part_labels: np.ndarray, parts: int) -> float:
    """Expected instance mIOU of labelling every point uniformly at random.

    A part holding fraction f of an instance's points gets expected
    intersection f/P and union f + (1 - f)/P, so IoU -> f / (P f + 1 - f)
    for many points (f / (1 + f) with two parts).
    """
    vals = []
    for lab in np.atleast_2d(part_labels):
        f = np.bincount(lab, minlength=parts)[:parts] / lab.shape[0]
        vals.append(np.mean(f / (parts * f + 1.0 - f)))
    return float(np.mean(vals))


def evaluate_checkpoint(path, data: PreparedData, inference: str = "teacher") -> EvalReport:
    model, _ = load_model(path)
    return evaluate(model, data, inference=inference)


# ablation ------------------------------------------------------------------------

SUITES = ("baseline", "dsn", "scl", "full_hsd")


def suite_configs(name: str, down_cfg: HFEConfig, tcfg: TrainConfig):
    """(downstream config, train config) of one ablation row."""
    if name == "baseline":
        return down_cfg, replace(tcfg, gamma=1.0, supervision="teacher", distill=False)
    if name == "dsn":
        return down_cfg, replace(tcfg, gamma=1.0, supervision="all")
    if name == "full_hsd":
        return down_cfg, replace(tcfg, gamma=0.8, supervision="all", distill=True)
    if name == "scl":
        w = tuple(down_cfg.level_widths)
        return (replace(down_cfg, level_widths=w[:-1] + (w[-2],)),
                replace(tcfg, gamma=0.8, supervision="all", distill=True))
    raise InvalidInput(f"unknown suite {name!r}; expected one of {SUITES}")


@dataclass
class AblationRun:
    suite: str
    seed: int
    report: EvalReport
    result: TrainResult


def ablate(data: PreparedData, up_cfg: UpstreamConfig, down_cfg: HFEConfig,
           tcfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2),
           suites: Sequence[str] = SUITES, out_dir: Optional[str] = None) -> List[AblationRun]:
    runs = []
    for name in suites:
        dcfg, cfg = suite_configs(name, down_cfg, tcfg)
        for seed in seeds:
            run_dir = None
            if out_dir:
                run_dir = os.path.join(out_dir, f"{name}_seed{seed}")
                os.makedirs(run_dir, exist_ok=True)
            res = train_model(data, up_cfg, dcfg, replace(cfg, seed=seed), run_dir)
            rep = evaluate(res.model, data)
            log.info("%s seed %d: OA %.3f CD %.3f", name, seed, rep.oa, rep.cd_x1000)
            runs.append(AblationRun(name, seed, rep, res))
    if out_dir:
        write_ablation(runs, out_dir)
    return runs


def ablation_rows(runs: Sequence[AblationRun], per_seed: bool = False) -> List[dict]:
    """Median-over-seeds table: per-level OA/mAcc (percent) and CD x1000.

    Levels without a trained head (the single-head baseline) show ``-``.
    """
    groups: Dict[str, List[AblationRun]] = {}
    for r in runs:
        groups.setdefault(r.suite if not per_seed else f"{r.suite}:{r.seed}", []).append(r)
    rows = []
    for key, rs in groups.items():
        suite = rs[0].suite
        row = {"suite": key, "seeds": len(rs)}
        levels = len(rs[0].report.per_level)
        for l in range(levels):
            if suite == "baseline" and l < levels - 1:
                row[f"L{l + 1}"] = "-"
                continue
            oa = np.median([r.report.per_level[l][0] for r in rs]) * 100
            macc = np.median([r.report.per_level[l][1] for r in rs]) * 100
            row[f"L{l + 1}"] = f"{oa:.1f}/{macc:.1f}"
        row["OA"] = round(float(np.median([r.report.oa for r in rs])) * 100, 2)
        row["CDx1000"] = round(float(np.median([r.report.cd_x1000 for r in rs])), 3)
        rows.append(row)
    return rows


def write_ablation(runs: Sequence[AblationRun], out_dir: str):
    for name, per_seed in (("ablation.csv", False), ("ablation_seeds.csv", True)):
        rows = ablation_rows(runs, per_seed)
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
