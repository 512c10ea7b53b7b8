from __future__ import annotations

import os

import numpy as np
import pytest

from engine import Parameter, Tensor, grad_check, grad_check_by_parameter
from engine.functional import (
    cross_entropy,
    einsum,
    getitem,
    layer_norm,
    linear,
    reduce_sum,
    relu,
    softmax_masked,
)
from models.config import ModelConfig
from models.encoder import EncoderModel
from services.verification import gradcheck_suite

SEEDS = range(20)
TOLERANCE = 1e-6

requires_slow = pytest.mark.skipif(
    not os.getenv("RUN_SLOW"), reason="set RUN_SLOW=1 to run the full verification suites"
)


@pytest.mark.parametrize("seed", SEEDS)
def test_triangle_contraction_gradients(seed: int) -> None:
    rng = np.random.default_rng(seed)
    alpha = Parameter("alpha", rng.normal(size=(3, 3, 3)))
    v1 = Parameter("v1", rng.normal(size=(3, 3, 2)))
    v2 = Parameter("v2", rng.normal(size=(3, 3, 2)))
    probe = Tensor(rng.normal(size=(3, 3, 2)))

    def f():
        return reduce_sum(einsum("ilj,ile,lje->ije", alpha, v1, v2) * probe)

    assert grad_check(f, [alpha, v1, v2]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_masked_softmax_gradients(seed: int) -> None:
    rng = np.random.default_rng(seed)
    scores = Parameter("scores", rng.normal(size=(2, 4, 3)))
    mask = rng.random((2, 4, 3)) < 0.7
    mask[:, 0, :] = True
    probe = Tensor(rng.normal(size=(2, 4, 3)))

    def f():
        return reduce_sum(softmax_masked(scores, axis=1, mask=mask) * probe)

    assert grad_check(f, [scores]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_linear_relu_gradients(seed: int) -> None:
    rng = np.random.default_rng(seed)
    x = Parameter("x", rng.normal(size=(3, 4)))
    gain = Parameter("gain", rng.normal(size=4))
    bias = Parameter("bias", rng.normal(size=4))
    w = Parameter("w", rng.normal(size=(4, 5)))
    b = Parameter("b", rng.normal(size=5) + 0.1)
    target = rng.integers(5, size=3)

    def f():
        return cross_entropy(relu(linear(layer_norm(x, gain, bias), w, b)), target)

    assert grad_check(f, [x, gain, bias, w, b]) < 1e-5


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_lookup_gradients(seed: int) -> None:
    rng = np.random.default_rng(seed)
    table = Parameter("table", rng.normal(size=(4, 3)))
    ids = rng.integers(4, size=(2, 5))
    probe = Tensor(rng.normal(size=(2, 5, 3)))

    def f():
        return reduce_sum(getitem(table, ids) * probe)

    assert grad_check(f, [table]) < TOLERANCE


def test_grad_check_reports_per_parameter() -> None:
    w = Parameter("w", np.array([1.0, 2.0]))
    unused = Parameter("unused", np.array([3.0]))
    report = grad_check_by_parameter(lambda: reduce_sum(w * w), [w, unused])
    assert set(report) == {"w", "unused"}
    assert report["unused"] == 0.0
    assert report["w"] < TOLERANCE


def test_grad_check_requires_float64() -> None:
    w = Parameter("w", np.ones(2, dtype=np.float32))
    with pytest.raises(ValueError):
        grad_check(lambda: reduce_sum(w), [w])


def test_grad_check_detects_a_wrong_gradient() -> None:
    w = Parameter("w", np.array([1.0, -2.0]))

    def f():
        out = reduce_sum(w * w)
        # forward value doubled, recorded graph unchanged
        out.data = out.data * 2.0
        return out

    assert grad_check(f, [w]) > 0.1


def test_encoder_model_gradients_float64() -> None:
    config = ModelConfig(
        num_layers=2, d=4, heads=2, tied=False, num_edge_labels=2, num_output_labels=3, dtype="float64"
    )
    model = EncoderModel(config, seed=5)
    label_ids = np.array([[[0, 1, 0], [0, 0, 2], [0, 0, 0]]])
    queries = np.array([[0, 2]])
    targets = np.array([1])

    def f():
        return cross_entropy(model.forward(label_ids, queries), targets)

    assert grad_check(f, model.parameters()) < 1e-4


@pytest.mark.slow
@requires_slow
def test_full_gradcheck_suite_passes() -> None:
    report = gradcheck_suite(seed=0)
    assert report["passed"].all(), report.to_string()
