"""Completion stream: a point-splitting masked autoencoder.

The encoder is a shared per-point MLP followed by a max over the set. The
decoder emits ``coarse_points`` points from the code with a fully-connected
layer, then each split stage copies every point ``ratio`` times and moves the
copies by tanh-bounded offsets predicted from (parent point, code).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInput, ShapeError
from .geometry import PointCloud, pairwise_sq_dists
from .nn import MLP, Linear, Module

MIN_INPUT_POINTS = 16


@dataclass(frozen=True)
class UpstreamConfig:
    encoder_widths: Tuple[int, ...] = (64, 128)
    coarse_points: int = 512
    split_ratios: Tuple[int, ...] = (1, 1, 2)
    target_points: int = 1024
    decoder_hidden: int = 256
    split_hidden: int = 64
    offset_scale: float = 0.2

    def __post_init__(self):
        prod = int(np.prod(self.split_ratios)) if self.split_ratios else 1
        if self.coarse_points * prod != self.target_points:
            raise InvalidInput(
                f"coarse_points {self.coarse_points} x ratios {self.split_ratios} "
                f"!= target_points {self.target_points}")
        if any(r < 1 for r in self.split_ratios):
            raise InvalidInput("split ratios must be >= 1")
        if not self.encoder_widths:
            raise InvalidInput("encoder needs at least one layer")

    @property
    def code_size(self) -> int:
        return self.encoder_widths[-1]


class SplitStage(Module):
    def __init__(self, ratio: int, code_size: int, hidden: int, offset_scale: float,
                 rng: np.random.Generator):
        super().__init__()
        self.ratio = ratio
        self.offset_scale = offset_scale
        self.point_in = self.child("point_in", Linear(3, hidden, rng))
        self.code_in = self.child("code_in", Linear(code_size, hidden, rng, bias=False))
        self.out = self.child("out", Linear(hidden, 3 * ratio, rng))

    def __call__(self, points: Tensor, code: Tensor) -> Tensor:
        b, n, _ = points.shape
        c = self.code_in(code).reshape(b, 1, -1)
        h = ad.relu(self.point_in(points) + c)
        off = ad.tanh(self.out(h)) * self.offset_scale
        off = off.reshape(b, n * self.ratio, 3)
        if self.ratio == 1:
            return points + off
        parents = np.repeat(np.arange(n), self.ratio)
        rep = ad.batch_gather(points, np.broadcast_to(parents, (b, n * self.ratio)))
        return rep + off


class Upstream(Module):
    def __init__(self, cfg: UpstreamConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = self.child("encoder", MLP((3,) + tuple(cfg.encoder_widths), rng))
        self.fc_hidden = self.child("fc_hidden", Linear(cfg.code_size, cfg.decoder_hidden, rng))
        self.fc_coarse = self.child("fc_coarse",
                                    Linear(cfg.decoder_hidden, 3 * cfg.coarse_points, rng))
        self.stages = [
            self.child(f"split{i}", SplitStage(r, cfg.code_size, cfg.split_hidden,
                                               cfg.offset_scale, rng))
            for i, r in enumerate(cfg.split_ratios)
        ]

    def encode(self, x) -> Tensor:
        """Global code of a (N', 3) or (B, N', 3) input; invariant to point order."""
        x = _batched(x)
        if x.shape[1] < MIN_INPUT_POINTS:
            raise InvalidInput(f"encoder needs >= {MIN_INPUT_POINTS} points, got {x.shape[1]}")
        return ad.max_over_set(self.encoder(x), axis=1)

    def coarse(self, code: Tensor) -> Tensor:
        h = ad.relu(self.fc_hidden(code))
        return self.fc_coarse(h).reshape(code.shape[0], self.cfg.coarse_points, 3)

    def decode(self, code: Tensor) -> Tensor:
        code = ad.as_tensor(code)
        if code.ndim == 1:
            code = code.reshape(1, -1)
        if code.shape[-1] != self.cfg.code_size:
            raise ShapeError(f"code has size {code.shape[-1]}, expected {self.cfg.code_size}")
        pts = self.coarse(code)
        for stage in self.stages:
            pts = stage(pts, code)
        return pts

    def __call__(self, x) -> Tensor:
        return self.decode(self.encode(x))


def _batched(x) -> Tensor:
    if isinstance(x, PointCloud):
        x = x.points
    x = ad.as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ShapeError(f"expected (B, N, 3) points, got {x.shape}")
    return x


def chamfer_matches(pred: np.ndarray, gt: np.ndarray):
    """Nearest-neighbour indices both ways for batches (B, N, 3) / (B, M, 3)."""
    d = pairwise_sq_dists(pred, gt)
    return np.argmin(d, axis=2), np.argmin(d, axis=1)


def rec_loss(pred, gt) -> Tensor:
    """Differentiable Chamfer reconstruction loss, averaged over the batch.

    The nearest-neighbour matching is recomputed from current values and held
    fixed for the backward pass.
    """
    pred = _batched(pred)
    if isinstance(gt, PointCloud):
        gt = gt.points
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if gt.ndim == 2:
        gt = gt[None]
    if gt.shape[0] != pred.shape[0]:
        raise ShapeError(f"batch mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.shape[1] == 0 or gt.shape[1] == 0:
        raise InvalidInput("rec_loss of an empty cloud")
    to_gt, to_pred = chamfer_matches(pred.data, gt)
    b = pred.shape[0]
    matched_gt = np.take_along_axis(gt, to_gt[..., None], axis=1)
    d1 = pred - matched_gt
    d2 = ad.batch_gather(pred, to_pred) - gt
    term1 = ad.sum(d1 * d1) * (1.0 / (b * pred.shape[1]))
    term2 = ad.sum(d2 * d2) * (1.0 / (b * gt.shape[1]))
    return term1 + term2
