"""Shared oracles for the test suite."""

import numpy as np

from scatterhsd import autodiff as ad


def brute_fps(pts, m, start=0):
    pts = np.asarray(pts, dtype=float)
    chosen = [start]
    for _ in range(m - 1):
        best, best_d = None, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            d = min(float(((pts[i] - pts[j]) ** 2).sum()) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def sqd(p, q):
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


def brute_knn(pts, center, k):
    d = [(sqd(pts[i], pts[center]), i) for i in range(len(pts))]
    return [i for _, i in sorted(d)[:k]]


def brute_chamfer(a, b):
    import math
    ab = [min(sqd(x, q) for q in b) for x in a]
    ba = [min(sqd(q, x) for x in a) for q in b]
    return math.fsum(ab) / len(a) + math.fsum(ba) / len(b)


def brute_nearest(a, b):
    out = []
    for x in a:
        best, bd = 0, None
        for j, q in enumerate(b):
            d = sqd(x, q)
            if bd is None or d < bd:
                best, bd = j, d
        out.append(best)
    return out


def numeric_grad(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. each array (modified in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            fp = f()
            arr[i] = old - h
            fm = f()
            arr[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / den)


def check_grads(build, leaves, h=1e-5):
    """Relative error between tape gradients and central differences.

    ``build(*tensors)`` returns a scalar Tensor; ``leaves`` are numpy arrays.
    """
    tensors = [ad.Tensor(x.copy(), requires_grad=True) for x in leaves]
    with ad.Tape() as tape:
        loss = build(*tensors)
        tape.backward(loss)
    analytic = [t.grad for t in tensors]
    work = [x.copy() for x in leaves]

    def f():
        return build(*[ad.Tensor(w) for w in work]).item()

    numeric = numeric_grad(f, work, h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def jitter(params, seed=0, scale=0.1):
    """Move parameters off zero-initialised biases.

    A patch center has relative coordinate 0, so with zero biases its first
    pre-activation sits exactly on the relu kink, where central differences
    average the two one-sided slopes.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.data += rng.normal(scale=scale, size=p.data.shape)


def param_gradcheck(params, build, h=1e-5):
    """Tape gradients of a distillation loss against central differences.

    ``build(frozen)`` returns ``(loss, teacher)``. The loss stops gradient at the
    teacher, so the matching finite-difference target holds the teacher's
    distribution fixed: the numeric pass calls ``build`` with the teacher
    tensor from the unperturbed forward pass.
    """
    for p in params:
        p.grad = None
    with ad.Tape() as tape:
        loss, teacher = build(None)
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    frozen = ad.Tensor(teacher.data.copy())
    numeric = numeric_grad(lambda: build(frozen)[0].item(), [p.data for p in params], h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))
