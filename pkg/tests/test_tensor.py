"""Tensor engine: kernels, reverse-mode gradients, rng, checkpoints."""

import numpy as np
import pytest

from radsum import tensor as T
from radsum.tensor import (
    NotScalar,
    Rng,
    ShapeMismatch,
    Tensor,
    grad_check,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    seeded_init,
)
from radsum.verify import kernel_cases, run_grad_checks


def test_matmul_identity():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    eye = Tensor(np.eye(2))
    assert np.array_equal(T.matmul(eye, a).data, a.data)


def test_matmul_shape_mismatch_message():
    with pytest.raises(ShapeMismatch) as err:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_requires_rank_two():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.zeros(3)), Tensor(np.zeros(3)))


def test_softmax_uniform():
    out = T.softmax(Tensor(np.zeros((1, 3))))
    assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = Rng(5)
    x = Tensor(rng.normal((4, 7), std=3.0))
    sums = T.softmax(x).data.sum(axis=-1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_softmax_shift_invariant():
    rng = Rng(6)
    x = rng.normal((3, 5), std=2.0)
    a = T.softmax(Tensor(x)).data
    b = T.softmax(Tensor(x + 100.0)).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_rms_norm_constant_row():
    out = T.rms_norm(Tensor(np.array([[2.0, 2.0, 2.0]])))
    assert np.max(np.abs(out.data - 1.0)) < 1e-5


def test_matmul_associativity():
    rng = Rng(7)
    a, b, c = (Tensor(rng.normal((4, 4))) for _ in range(3))
    left = T.matmul(T.matmul(a, b), c).data
    right = T.matmul(a, T.matmul(b, c)).data
    assert np.max(np.abs(left - right)) < 1e-9


def test_backward_square():
    x = Tensor(np.array([3.0]), requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [6.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NotScalar):
        (x * x).backward()


def test_backward_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    assert np.array_equal(x.grad, 2 * first)


def test_zero_grad_resets():
    x = Tensor(np.array([3.0]), requires_grad=True)
    (x * x).sum().backward()
    x.zero_grad()
    (x * x).sum().backward()
    assert np.allclose(x.grad, [6.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert y._backward_fn is None
    assert not y.requires_grad


def test_add_broadcast_gradient():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    bias = Tensor(np.zeros(3), requires_grad=True)
    (x + bias).sum().backward()
    assert np.array_equal(bias.grad, [2.0, 2.0, 2.0])


def test_grad_check_quadratic_exact():
    x = Tensor(np.array([1.0, -2.0, 0.5]))
    assert grad_check(lambda t: (t * t).sum(), x) < 1e-8


def test_grad_check_flags_wrong_gradient():
    # An op whose backward doubles the true gradient (4x instead of 2x)
    # must score a relative error of |2x| / |4x| = 0.5.
    def wrong_square_sum(t):
        out = Tensor(np.array((t.data ** 2).sum()))
        out._parents = (t,)
        out._backward_fn = lambda g: [(t, g * 4.0 * t.data)]
        return out

    err = grad_check(wrong_square_sum, Tensor(np.array([1.0, 2.0])))
    assert abs(err - 0.5) < 1e-3


def test_every_kernel_passes_grad_check():
    failures = [
        (name, err)
        for name, err in run_grad_checks(seed=0, include_model=False)
        if err >= 1e-5
    ]
    assert failures == []


def test_kernel_case_list_covers_engine():
    names = {name for name, _, _ in kernel_cases(seed=0)}
    for expected in ("matmul", "softmax", "rms_norm", "silu", "embedding",
                     "transpose", "concat", "slice", "reshape", "gather_rows"):
        assert any(expected in name for name in names), expected


def test_seeded_init_zeros():
    out = seeded_init((4,), ("zeros",), Rng(0))
    assert np.array_equal(out.data, np.zeros(4))


def test_seeded_init_normal_deterministic():
    a = seeded_init((100, 100), ("normal", 0.0, 0.02), Rng(9))
    b = seeded_init((100, 100), ("normal", 0.0, 0.02), Rng(9))
    assert np.array_equal(a.data, b.data)


def test_seeded_init_normal_mean():
    n = 10_000
    out = seeded_init((n,), ("normal", 0.0, 0.02), Rng(2))
    assert abs(out.data.mean()) < 4 * 0.02 / np.sqrt(n)


def test_rng_split_independent():
    root = Rng(3)
    a = root.split("left").normal((8,))
    b = root.split("right").normal((8,))
    c = Rng(3).split("left").normal((8,))
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_rng_uniform_range():
    sample = Rng(4).uniform((1000,), low=-1.0, high=2.0)
    assert sample.min() >= -1.0 and sample.max() < 2.0


def test_checkpoint_round_trip(tmp_path):
    rng = Rng(8)
    tensors = {
        "w": rng.normal((3, 4)),
        "b": rng.normal((4,)),
        "meta.config": np.array([1.0, 2.0]),
    }
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name])


def test_checkpoint_header_counts_only_real_parameters(tmp_path):
    tensors = {
        "w": np.zeros((3, 4)),
        "meta.config": np.zeros(6),
    }
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, tensors)
    header = path.read_bytes()[:32].split(b"\n", 1)[0]
    assert header == b"ckpt-v1 12"


def test_checkpoint_bytes_deterministic(tmp_path):
    tensors = {"w": Rng(1).normal((5, 5))}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors)
    save_checkpoint(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()
