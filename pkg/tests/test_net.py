import numpy as np
import pytest

from skipguide.net import (Arch, NetError, PerturbationConfig, forward, init_model, param_specs,
                           position_embedding, timestep_embedding)
from skipguide.numerics import derive_stream, gaussian


def rand_x(arch, seed, batch=None):
    shape = arch.video_shape if batch is None else (batch, *arch.video_shape)
    return gaussian(derive_stream(seed, 5), shape)[0]


def test_param_order_and_count(small_arch, small_model):
    names = [n for n, _ in param_specs(small_arch)]
    assert names[:3] == ["embed.W_in", "embed.b_in", "embed.class"]
    assert names[3:9] == [f"layer0.spatial.{k}" for k in ("ln_g", "ln_b", "W_Q", "W_K", "W_V", "W_O")]
    assert names[-2:] == ["head.W_out", "head.b_out"]
    assert small_model.params["embed.class"].shape == (small_arch.n_classes + 1, small_arch.dim)
    assert small_model.n_params == sum(int(np.prod(s)) for _, s in param_specs(small_arch))


def test_output_shape_and_batch_consistency(small_arch, small_model):
    xb = rand_x(small_arch, 0, batch=3)
    out = forward(small_model, xb, [5, 50, 150], [0, 1, None])
    assert out.shape == xb.shape
    for i, (t, c) in enumerate([(5, 0), (50, 1), (150, None)]):
        np.testing.assert_allclose(forward(small_model, xb[i], t, c), out[i], rtol=0, atol=1e-13)


def test_null_token_changes_prediction(small_arch, small_model):
    x = rand_x(small_arch, 1)
    assert not np.allclose(forward(small_model, x, 10, 0), forward(small_model, x, 10, None))


def test_shape_and_class_errors(small_model):
    with pytest.raises(NetError):
        forward(small_model, np.zeros((4, 1, 4, 5)), 0, 0)
    with pytest.raises(NetError):
        forward(small_model, np.zeros((4, 1, 4, 4)), 0, 7)


def test_empty_perturbation_is_identity(small_arch, small_model):
    x = rand_x(small_arch, 2)
    base = forward(small_model, x, 30, 1)
    for mode in ("residual_skip", "attention_skip"):
        p = PerturbationConfig(mode, (), axis="spatial")
        assert np.array_equal(forward(small_model, x, 30, 1, p), base)


def test_residual_skip_everywhere(small_arch, small_model):
    x = rand_x(small_arch, 3)
    p = PerturbationConfig("residual_skip", tuple(range(small_arch.layers)))
    P = small_model.params
    tokens = x.transpose(0, 2, 3, 1)
    z = tokens @ P["embed.W_in"] + P["embed.b_in"] + position_embedding(small_arch)
    z = z + timestep_embedding(np.array([40]), small_arch.dim)[0] + P["embed.class"][2]
    expect = (z @ P["head.W_out"] + P["head.b_out"]).transpose(0, 3, 1, 2)
    np.testing.assert_allclose(forward(small_model, x, 40, 2, p), expect, rtol=0, atol=1e-13)


@pytest.mark.parametrize("layer", [0, 1])
def test_residual_skip_locality(small_arch, small_model, layer):
    x = rand_x(small_arch, 4)
    p = PerturbationConfig("residual_skip", (layer,))
    _, base = forward(small_model, x, 77, 0, return_activations=True)
    _, pert = forward(small_model, x, 77, 0, p, return_activations=True)
    for l in range(layer + 1):
        assert np.array_equal(base[l], pert[l])
    assert np.array_equal(pert[layer + 1], pert[layer])


def test_axis_residual_skip_is_partial(small_arch, small_model):
    x = rand_x(small_arch, 5)
    full = forward(small_model, x, 10, 0, PerturbationConfig("residual_skip", (1,)))
    part = forward(small_model, x, 10, 0, PerturbationConfig("residual_skip", (1,), axis="temporal"))
    base = forward(small_model, x, 10, 0)
    assert not np.allclose(part, full) and not np.allclose(part, base)


@pytest.mark.parametrize("axis", ["spatial", "temporal"])
def test_attention_skip_identity_equivalence(small_arch, small_model, axis):
    p = PerturbationConfig("attention_skip", (0, 1), axis=axis)
    for seed in range(5):
        x = rand_x(small_arch, 10 + seed)
        a = forward(small_model, x, 3 * seed, seed % 3, p)
        b = forward(small_model, x, 3 * seed, seed % 3, p, identity_matrix=True)
        assert np.abs(a - b).max() <= 1e-12
        assert not np.allclose(a, forward(small_model, x, 3 * seed, seed % 3))


def test_attention_blur(small_arch, small_model):
    x = rand_x(small_arch, 6)
    base = forward(small_model, x, 20, 0)
    sharp = PerturbationConfig("attention_blur", (1,), axis="spatial", blur_sigma=1e-3)
    np.testing.assert_allclose(forward(small_model, x, 20, 0, sharp), base, rtol=0, atol=1e-14)
    wide = forward(small_model, x, 20, 0, PerturbationConfig("attention_blur", (1,), axis="spatial"))
    assert not np.allclose(wide, base)


def test_joint_mode():
    arch = Arch(layers=2, dim=8, attention_mode="joint", frames=3, height=3, width=3, n_classes=2,
                mlp_hidden=8)
    m = init_model(arch, derive_stream(0, 0))
    x = rand_x(arch, 7)
    p = PerturbationConfig("attention_skip", (1,), axis="joint")
    a = forward(m, x, 5, 0, p)
    b = forward(m, x, 5, 0, p, identity_matrix=True)
    assert np.abs(a - b).max() <= 1e-12
    with pytest.raises(NetError):
        forward(m, x, 5, 0, PerturbationConfig("attention_skip", (1,), axis="spatial"))


def test_perturbation_validation(small_model):
    x = np.zeros(small_model.arch.video_shape)
    with pytest.raises(NetError):
        forward(small_model, x, 0, 0, PerturbationConfig("residual_skip", (2,)))
    with pytest.raises(NetError):
        forward(small_model, x, 0, 0, PerturbationConfig("attention_skip", (0,), axis="joint"))
    with pytest.raises(NetError):
        PerturbationConfig("attention_skip", (0,))
    with pytest.raises(NetError):
        PerturbationConfig("dropout", (0,))
    with pytest.raises(NetError):
        PerturbationConfig("attention_blur", (0,), axis="spatial", blur_sigma=0.0)


def test_arch_validation():
    with pytest.raises(NetError):
        Arch(heads=2)
    with pytest.raises(NetError):
        Arch(attention_mode="axial")
    with pytest.raises(NetError):
        Arch(layers=0)


def test_embeddings():
    e = timestep_embedding(np.array([0, 7]), 16)
    assert e.shape == (2, 16)
    np.testing.assert_allclose(e[0, :8], 0.0)
    np.testing.assert_allclose(e[0, 8:], 1.0)
    pe = position_embedding(Arch())
    assert pe.shape == (8, 8, 8, 16)
    # codes are periodic: frame 0 and a full wrap coincide, distinct positions do not
    assert not np.allclose(pe[0, 0, 0], pe[0, 0, 1])
    assert not np.allclose(pe[0, 0, 0], pe[1, 0, 0])


def test_forward_does_not_mutate(small_model, small_arch):
    before = {k: v.copy() for k, v in small_model.params.items()}
    forward(small_model, rand_x(small_arch, 8), 12, 0, PerturbationConfig("residual_skip", (0,)))
    assert all(np.array_equal(before[k], small_model.params[k]) for k in before)
