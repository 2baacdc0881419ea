import numpy as np
import pytest

from scatterhsd import checkpoint
from scatterhsd.errors import ParseError
from scatterhsd.optim import Adam, AdamState, adam_step, cosine_lr, step_decay_lr
from scatterhsd.autodiff import Tensor


def test_single_adam_step_moves_by_lr():
    (p,), st = adam_step([np.array(1.0)], [np.array(1.0)], AdamState(), lr=0.001)
    assert 1.0 - p == pytest.approx(0.001, rel=1e-6)
    assert st.step == 1


def test_zero_gradient_leaves_params():
    p0 = [np.array([1.0, -2.0])]
    p, st = adam_step(p0, [np.zeros(2)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p[0], p0[0])
    assert st.step == 1
    np.testing.assert_array_equal(p0[0], [1.0, -2.0])


def test_adam_deterministic_trajectories():
    def run():
        rng = np.random.default_rng(0)
        p, st = [rng.normal(size=3)], AdamState()
        for i in range(20):
            p, st = adam_step(p, [np.sin(p[0] * (i + 1))], st, 0.01)
        return p[0]
    assert run().tobytes() == run().tobytes()


def test_adam_class_uses_param_grads():
    t = Tensor(np.array([1.0]), requires_grad=True)
    t.grad = np.array([1.0])
    opt = Adam([t])
    opt.step(0.001)
    assert t.data[0] == pytest.approx(0.999, rel=1e-9)


def test_step_decay_schedule_exact():
    for e in range(0, 300, 7):
        assert step_decay_lr(e) == 0.001 * 0.8 ** (e // 50)
    assert step_decay_lr(49) == 0.001
    assert step_decay_lr(50) == 0.001 * 0.8


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 0.1, 0.0005) == pytest.approx(0.1)
    assert cosine_lr(100, 100, 0.1, 0.0005) == pytest.approx(0.0005)
    vals = [cosine_lr(e, 100, 0.1, 0.0005) for e in range(101)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_checkpoint_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.normal(size=(3, 4)), "b": np.array(1.5), "c": rng.normal(size=7)}
    h = checkpoint.save(tmp_path / "m.ckpt", params, {"x": 1})
    back, meta = checkpoint.load(tmp_path / "m.ckpt")
    assert meta == {"x": 1}
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()
        assert back[k].shape == params[k].shape
    assert h == checkpoint.save(tmp_path / "n.ckpt", params, {"x": 1})
    assert h == checkpoint.digest(params, {"x": 1})


def test_checkpoint_corruption(tmp_path):
    blob = checkpoint.dumps({"a": np.ones(3)})
    with pytest.raises(ParseError):
        checkpoint.loads(b"garbage" + blob)
    with pytest.raises(ParseError):
        checkpoint.loads(blob[:-4])
