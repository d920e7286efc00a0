import numpy as np
import pytest

from oracles import (avgpool_scalar, conv2d_scalar, depthwise_scalar,
                     maxpool_scalar)
from ptqtune import (avgpool, conv2d, depthwise_conv2d, evaluate_top1,
                     maxpool, observe_activations, run_fp32, softmax,
                     top1_from_scores)

RNG = np.random.default_rng(42)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv2d_matches_scalar_oracle(stride, pad):
    x = RNG.standard_normal((2, 3, 7, 7)).astype(np.float32)
    w = RNG.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = RNG.standard_normal(4).astype(np.float32)
    got = conv2d(x, w, b, stride, pad)
    for n in range(2):
        want = conv2d_scalar(x[n], w, b, stride, pad)
        assert np.allclose(got[n], want, atol=1e-4)


def test_depthwise_matches_scalar_oracle():
    x = RNG.standard_normal((1, 3, 6, 6)).astype(np.float32)
    w = RNG.standard_normal((3, 1, 3, 3)).astype(np.float32)
    got = depthwise_conv2d(x, w, None, 1, 1)
    want = depthwise_scalar(x[0], w, None, 1, 1)
    assert np.allclose(got[0], want, atol=1e-4)


def test_pools_match_scalar_oracles():
    x = RNG.standard_normal((1, 2, 8, 8)).astype(np.float32)
    assert np.allclose(maxpool(x, 2, 2)[0], maxpool_scalar(x[0], 2, 2))
    assert np.allclose(avgpool(x, 4, 4)[0], avgpool_scalar(x[0], 4, 4), atol=1e-6)


def test_softmax_rows_are_distributions():
    x = RNG.standard_normal((5, 10)).astype(np.float32)
    s = softmax(x)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)
    assert (s >= 0).all()
    # monotone: argmax preserved
    assert (np.argmax(s, axis=-1) == np.argmax(x, axis=-1)).all()


def test_all_fixtures_reach_perfect_fp32_top1(lenet, resnet, mobile, ds):
    for g in (lenet, resnet, mobile):
        r = evaluate_top1(g, ds)
        assert r.n_evaluated == 200
        assert r.top1 == 1.0, f"{g.name}: fp32 top1 {r.top1}"


def test_run_accepts_single_image(lenet, ds):
    one = run_fp32(lenet, ds.eval_images[0])
    batch = run_fp32(lenet, ds.eval_images[:1])
    assert one.shape == (1, 10)
    assert np.array_equal(one, batch)


def test_batch_shape_mismatch_rejected(lenet):
    with pytest.raises(ValueError):
        run_fp32(lenet, np.zeros((2, 1, 32, 32), dtype=np.float32))


def test_top1_tie_breaks_to_lowest_index():
    scores = np.array([[0.5, 0.5, 0.1]])
    assert top1_from_scores(scores, np.array([0])).top1 == 1.0
    assert top1_from_scores(scores, np.array([1])).top1 == 0.0
    with pytest.raises(ValueError):
        top1_from_scores(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


def test_observer_sees_every_tensor_once_per_image(lenet, ds):
    seen: dict[str, int] = {}
    observe_activations(lenet, ds.calib_images[:3],
                        lambda tid, v: seen.update({tid: seen.get(tid, 0) + 1}))
    tensors = {"input"} | {n.output for n in lenet.nodes}
    assert set(seen) == tensors
    assert all(c == 3 for c in seen.values())
