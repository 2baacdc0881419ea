"""Binned mutual-information estimates for per-level representations.

Activations are quantized per dimension into equal-width bins over the range
observed in the batch; a sample's code is its tuple of bin indices. All
quantities are plug-in estimates in nats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .errors import InvalidInput

TRACE_FIELDS = ("epoch", "level", "i_xz", "i_yz", "kl_gap", "ce")


@dataclass(frozen=True)
class MITrace:
    epoch: int
    level: int
    i_xz: float
    i_yz: float
    kl_gap_to_teacher: float
    ce: float

    def row(self) -> dict:
        d = asdict(self)
        d["kl_gap"] = d.pop("kl_gap_to_teacher")
        return d


def bin_activations(z, bins: int = 6) -> np.ndarray:
    """Bin indices (batch, d) for activations ``z`` (batch, d).

    A dimension whose min equals its max falls entirely into bin 0.
    """
    if bins < 2:
        raise InvalidInput("need at least 2 bins")
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    lo = z.min(axis=0)
    span = z.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    idx = np.floor((z - lo) / safe * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    idx[:, span <= 0] = 0
    return idx


def _code_ids(codes) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.ndim == 1:
        return np.unique(codes, return_inverse=True)[1].reshape(-1)
    return np.unique(codes, axis=0, return_inverse=True)[1].reshape(-1)


def entropy(ids) -> float:
    """Plug-in entropy (nats) of the empirical distribution of ``ids``."""
    _, counts = np.unique(np.asarray(ids), return_counts=True)
    p = counts / counts.sum()
    return float(-math.fsum(p * np.log(p)))


def conditional_entropy(ids, given) -> float:
    ids = np.asarray(ids)
    given = np.asarray(given)
    n = ids.shape[0]
    terms = []
    for g in np.unique(given):
        sel = given == g
        terms.append(sel.sum() / n * entropy(ids[sel]))
    return math.fsum(terms)


def mutual_information(codes, conditioner) -> float:
    """``H(Z) - H(Z | conditioner)`` for discrete codes (rows or scalars).

    Clipped to ``[0, min(H(Z), H(conditioner))]``, the range MI cannot leave;
    only rounding noise is ever removed.
    """
    ids = _code_ids(codes)
    cond = np.asarray(conditioner).reshape(-1)
    if ids.shape[0] == 0:
        raise InvalidInput("need at least one sample")
    if cond.shape[0] != ids.shape[0]:
        raise InvalidInput(f"{ids.shape[0]} codes but {cond.shape[0]} conditioner values")
    hz = entropy(ids)
    mi = hz - conditional_entropy(ids, cond)
    return float(min(max(mi, 0.0), hz, entropy(cond)))


def exact_mutual_information(joint: np.ndarray) -> float:
    """MI of a discrete joint probability table, by enumeration."""
    joint = np.asarray(joint, dtype=np.float64)
    joint = joint / joint.sum()
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    terms = []
    for i in range(joint.shape[0]):
        for j in range(joint.shape[1]):
            if joint[i, j] > 0:
                terms.append(joint[i, j] * math.log(joint[i, j] / (px[i] * py[j])))
    return math.fsum(terms)


def level_trace(epoch: int, aligned: Sequence, logits: Sequence, y, bins: int = 6) -> List[MITrace]:
    """One :class:`MITrace` per level from aligned features and logits (arrays)."""
    y = np.asarray(y).reshape(-1)
    sample_ids = np.arange(y.shape[0])
    probs, logps = [], []
    for lg in logits:
        lg = np.asarray(getattr(lg, "data", lg))
        z = lg - lg.max(axis=-1, keepdims=True)
        lp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logps.append(lp)
        probs.append(np.exp(lp))
    teacher_p, teacher_lp = probs[-1], logps[-1]
    out = []
    for l, (z, lp) in enumerate(zip(aligned, logps)):
        codes = bin_activations(z, bins)
        kl = float(np.mean(np.sum(teacher_p * (teacher_lp - lp), axis=-1)))
        ce = float(-np.mean(lp[np.arange(y.shape[0]), y]))
        out.append(MITrace(epoch, l + 1, mutual_information(codes, sample_ids),
                           mutual_information(codes, y), kl, ce))
    return out


def trace_epoch(model, x_in, y, epoch: int, bins: int = 6) -> List[MITrace]:
    """Trace every level of ``model`` on a fixed evaluation batch.

    ``model.infer(x_in)`` must return ``(reconstruction, LevelOutputs)``; no
    gradients are recorded and the model is not modified.
    """
    _, outs = model.infer(x_in)
    return level_trace(epoch, [z.data for z in outs.aligned_features],
                       [lg.data for lg in outs.logits], y, bins)


def write_traces(path, traces: Iterable[MITrace]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for t in traces:
            w.writerow(t.row())


def read_traces(path) -> List[MITrace]:
    with open(path, newline="") as fh:
        return [MITrace(int(r["epoch"]), int(r["level"]), float(r["i_xz"]), float(r["i_yz"]),
                        float(r["kl_gap"]), float(r["ce"])) for r in csv.DictReader(fh)]
