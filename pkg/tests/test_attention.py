from __future__ import annotations

import numpy as np
import pytest

from engine import DimensionError, Parameter, Tensor
from models import reference
from models.attention import (
    AblationMode,
    TriAttnParams,
    triangular_attention,
    triangular_attention_head,
    triangular_attention_weights,
)
from models.masks import PivotMask, causal_pivot_mask, full_pivot_mask

NAMES = ("wq", "bq", "wk", "bk", "v1", "b1", "v2", "b2", "wo", "bo")


def make_params(rng: np.random.Generator, d: int, heads: int) -> TriAttnParams:
    values = {
        name: Parameter(name, rng.normal(size=(d, d) if name[0] in "wv" else (d,)))
        for name in NAMES
    }
    return TriAttnParams(**values, num_heads=heads)


def arrays(p: TriAttnParams) -> dict[str, np.ndarray]:
    return {name: getattr(p, name).data for name in NAMES}


def rel_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs(actual - expected)) / max(1.0, float(np.max(np.abs(expected)))))


@pytest.mark.parametrize("mode", list(AblationMode))
@pytest.mark.parametrize("heads", [1, 2])
@pytest.mark.parametrize("d", [2, 4, 8])
@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_multi_head_attention_matches_loop_oracle(n: int, d: int, heads: int, mode: AblationMode) -> None:
    rng = np.random.default_rng(100 * n + 10 * d + heads)
    p = make_params(rng, d, heads)
    x = rng.normal(size=(1, n, n, d))
    allowed = np.ones((n, n, n), dtype=bool)

    actual = triangular_attention(Tensor(x), p, PivotMask(allowed), mode).data[0]
    expected = reference.attention(x[0], arrays(p), heads, allowed, mode)

    assert rel_error(actual, expected) <= 1e-12


@pytest.mark.parametrize("mode", list(AblationMode))
def test_single_head_matches_loop_oracle_under_causal_mask(mode: AblationMode) -> None:
    rng = np.random.default_rng(7)
    p = make_params(rng, 4, 2)
    x = rng.normal(size=(1, 5, 5, 4))
    mask = causal_pivot_mask(2, 3)
    head = p.head(1)
    head_arrays = reference.split_heads(arrays(p), 2)[1]

    actual = triangular_attention_head(Tensor(x), head, mask, mode).data[0]
    expected = reference.attention_head(x[0], head_arrays, mask.allowed, mode)

    assert rel_error(actual, expected) <= 1e-12


def test_weights_normalize_over_pivots_and_masked_pivots_are_zero() -> None:
    rng = np.random.default_rng(3)
    p = make_params(rng, 4, 2)
    mask = full_pivot_mask(4, lengths=[4, 2])
    alpha = triangular_attention_weights(Tensor(rng.normal(size=(2, 4, 4, 4))), p.head(0), mask).data

    np.testing.assert_allclose(alpha.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(alpha[~mask.allowed] == 0.0)


def test_pivots_outside_the_mask_do_not_influence_the_update() -> None:
    rng = np.random.default_rng(4)
    p = make_params(rng, 4, 1)
    allowed = np.ones((3, 3, 3), dtype=bool)
    allowed[:, 2, :] = False
    mask = PivotMask(allowed)
    x = rng.normal(size=(1, 3, 3, 4))
    edited = x.copy()
    # pivot 2 only reaches (i, j) through edges (i, 2) and (2, j)
    edited[0, 0, 2] += 10.0
    edited[0, 2, 1] -= 5.0

    before = triangular_attention(Tensor(x), p, mask).data[0, 0, 1]
    after = triangular_attention(Tensor(edited), p, mask).data[0, 0, 1]
    np.testing.assert_array_equal(before, after)


def test_value_ablation_ignores_the_second_edge() -> None:
    rng = np.random.default_rng(5)
    p = make_params(rng, 4, 2)
    x = Tensor(rng.normal(size=(1, 3, 3, 4)))
    base = triangular_attention(x, p, full_pivot_mask(3), AblationMode.BASE).data
    ablated = triangular_attention(x, p, full_pivot_mask(3), AblationMode.VALUE_ABLATION).data
    assert not np.allclose(base, ablated)

    p.v2.data[:] = 0.0
    p.b2.data[:] = 0.0
    zeroed = triangular_attention(x, p, full_pivot_mask(3), AblationMode.VALUE_ABLATION).data
    np.testing.assert_array_equal(zeroed, ablated)


def test_attention_ablation_weights_do_not_depend_on_the_pivot_key() -> None:
    rng = np.random.default_rng(6)
    p = make_params(rng, 2, 1)
    x = rng.normal(size=(1, 3, 3, 2))
    alpha = triangular_attention_weights(Tensor(x), p.head(0), full_pivot_mask(3), AblationMode.ATTENTION_ABLATION)
    edited = x.copy()
    edited[0, 1, 2] += 3.0
    moved = triangular_attention_weights(Tensor(edited), p.head(0), full_pivot_mask(3), AblationMode.ATTENTION_ABLATION)
    # alpha_{0 l 0} reads x_0l and x_00 only
    np.testing.assert_array_equal(alpha.data[0, 0, :, 0], moved.data[0, 0, :, 0])


def test_multi_head_equals_concatenated_single_heads() -> None:
    rng = np.random.default_rng(8)
    p = make_params(rng, 6, 3)
    x = Tensor(rng.normal(size=(2, 3, 3, 6)))
    mask = full_pivot_mask(3)
    joined = np.concatenate([triangular_attention_head(x, head, mask).data for head in p.heads], axis=-1)
    expected = joined @ p.wo.data + p.bo.data
    np.testing.assert_allclose(triangular_attention(x, p, mask).data, expected, rtol=1e-10, atol=1e-12)


def test_permuting_nodes_permutes_the_update() -> None:
    rng = np.random.default_rng(9)
    p = make_params(rng, 4, 2)
    x = rng.normal(size=(1, 4, 4, 4))
    perm = np.array([2, 0, 3, 1])
    out = triangular_attention(Tensor(x), p, full_pivot_mask(4)).data[0]
    permuted = triangular_attention(Tensor(x[:, perm][:, :, perm]), p, full_pivot_mask(4)).data[0]
    np.testing.assert_allclose(permuted, out[np.ix_(perm, perm)], atol=1e-10)


def test_heads_must_divide_width() -> None:
    with pytest.raises(DimensionError):
        make_params(np.random.default_rng(0), 6, 4)


def test_state_width_mismatch_raises() -> None:
    p = make_params(np.random.default_rng(0), 4, 2)
    with pytest.raises(DimensionError):
        triangular_attention(Tensor(np.zeros((1, 3, 3, 2))), p, full_pivot_mask(3))


def test_mask_size_mismatch_raises() -> None:
    p = make_params(np.random.default_rng(0), 4, 2)
    with pytest.raises(DimensionError):
        triangular_attention(Tensor(np.zeros((1, 3, 3, 4))), p, full_pivot_mask(4))
