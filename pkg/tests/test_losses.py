import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ockd import net
from ockd.errors import ConfigurationError, ContractError, NumericError
from ockd.losses import DistillWeights, cosine_distance, distill_loss, level_distances, pixel_bce
from ockd.net import FeaturePyramid

from conftest import finite_difference, max_relative_error


@pytest.mark.parametrize("label", [0, 1])
def test_bce_at_half(label):
    d = torch.full((1, 1, 32, 32), 0.5)
    assert float(pixel_bce(d, [label])) == pytest.approx(math.log(2), abs=1e-6)


def test_bce_hand_value():
    d = torch.full((1, 1, 32, 32), 0.9, dtype=torch.float64)
    assert float(pixel_bce(d, [1])) == pytest.approx(-math.log(0.9), rel=1e-12)


def test_bce_rejects_nan():
    d = torch.full((1, 1, 32, 32), 0.5)
    d[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError):
        pixel_bce(d, [0])


def test_bce_is_clamped_and_nonnegative():
    d = torch.zeros((2, 1, 32, 32))
    val = float(pixel_bce(d, [0, 1]))
    assert math.isfinite(val) and val >= 0
    assert float(pixel_bce(torch.zeros((1, 1, 32, 32), dtype=torch.float64), [0])) == pytest.approx(
        -math.log(1 - 1e-7)
    )


@pytest.mark.parametrize(
    "f, g, expected",
    [((1.0, 2.0, 3.0), (1.0, 2.0, 3.0), 0.0), ((1.0, 0.0), (0.0, 1.0), 1.0), ((1.0, 0.0), (-1.0, 0.0), 2.0)],
)
def test_cosine_examples(f, g, expected):
    val = cosine_distance(torch.tensor(f, dtype=torch.float64), torch.tensor(g, dtype=torch.float64))
    # the 1e-12 norm floor perturbs exact values by ~1e-12
    assert float(val) == pytest.approx(expected, abs=1e-10)


def test_cosine_zero_vector_is_guarded():
    val = cosine_distance(torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64))
    assert float(val) == pytest.approx(1.0)


def test_cosine_rejects_inf():
    with pytest.raises(NumericError):
        cosine_distance(torch.tensor([1.0, float("inf")]), torch.tensor([1.0, 1.0]))


vec = arrays("float64", st.integers(2, 16), elements=st.floats(-10, 10)).filter(
    lambda a: float((a ** 2).sum()) > 1.0
)


@settings(max_examples=60, deadline=None)
@given(vec, st.floats(0.1, 100))
def test_cosine_scale_invariant(a, c):
    f = torch.from_numpy(a)
    assert float(cosine_distance(f, c * f)) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10).flatmap(lambda n: st.tuples(
    arrays("float64", n, elements=st.floats(-5, 5)), arrays("float64", n, elements=st.floats(-5, 5))
)))
def test_cosine_symmetric_and_bounded(pair):
    f, g = (torch.from_numpy(x) for x in pair)
    s1, s2 = float(cosine_distance(f, g)), float(cosine_distance(g, f))
    assert s1 == s2
    assert -1e-12 <= s1 <= 2 + 1e-12


def _pyramid(seed, n=3, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    shapes = [(n, 2, 8, 8), (n, 3, 4, 4), (n, 4, 2, 2)]
    return FeaturePyramid(tuple(torch.randn(s, generator=gen, dtype=dtype) for s in shapes))


def test_distill_identical_is_zero():
    t = _pyramid(0)
    assert float(distill_loss(t, t)) == pytest.approx(0.0, abs=1e-12)


def test_distill_negated():
    t = _pyramid(0)
    s = FeaturePyramid(tuple(-f for f in t.levels))
    assert float(distill_loss(t, s, DistillWeights(0.33, 0.33, 0.33))) == pytest.approx(1.98, abs=1e-10)


def test_distill_level_distances_0_1_2():
    # one sample whose levels are identical, orthogonal and antipodal
    t = FeaturePyramid((torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 0.0]])))
    s = FeaturePyramid((torch.tensor([[1.0, 0.0]]), torch.tensor([[0.0, 1.0]]), torch.tensor([[-1.0, 0.0]])))
    assert level_distances(t, s).tolist() == [[0.0, 1.0, 2.0]]
    assert float(distill_loss(t, s)) == pytest.approx(0.99, abs=1e-6)


def test_distill_batch_permutation_and_lambda_additivity():
    t, s = _pyramid(0), _pyramid(1)
    perm = torch.tensor([2, 0, 1])
    tp = FeaturePyramid(tuple(f[perm] for f in t.levels))
    sp = FeaturePyramid(tuple(f[perm] for f in s.levels))
    assert float(distill_loss(t, s)) == pytest.approx(float(distill_loss(tp, sp)), rel=1e-12)
    w = DistillWeights(0.1, 0.2, 0.3)
    w2 = DistillWeights(0.2, 0.4, 0.6)
    assert float(distill_loss(t, s, w2)) == pytest.approx(2 * float(distill_loss(t, s, w)), rel=1e-12)


def test_distill_shape_mismatch():
    t = _pyramid(0, n=3)
    s = _pyramid(0, n=2)
    with pytest.raises(ContractError):
        distill_loss(t, s)


def test_distill_weights_validation():
    with pytest.raises(ConfigurationError):
        DistillWeights(0, 0, 0)
    with pytest.raises(ConfigurationError):
        DistillWeights(-0.1, 0.5, 0.5)


def test_distill_gradient_matches_finite_differences():
    arch = net.extractor_arch((2, 2, 2), convs_per_block=1)
    teacher = net.build_network(arch, seed=1, dtype=torch.float64)
    student = net.build_network(arch, seed=2, dtype=torch.float64).trainable()
    # tiny frames keep pre-activations clear of rectifier kinks at step 1e-5
    x = torch.rand((3, 3, 16, 16), generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    t_pyr = net.forward_features(teacher, x)

    def loss_fn():
        return distill_loss(t_pyr, net.forward_features(student, x, train=True))

    analytic = net.gradients(loss_fn(), student)
    numeric = finite_difference(loss_fn, student.tensors)
    assert student.num_parameters() < 5000
    assert max_relative_error(analytic, numeric, student.tensors) <= 1e-3
