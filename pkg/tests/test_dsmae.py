import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from s3pet.dsmae import DsMAE, init_dsmae, mae_forward, stage1_loss
from s3pet.errors import ConfigError, NumericError, ShapeError
from s3pet.tokenizer import patchify

DIMS = dict(slice_size=16, patch=4, dim=8, depth=1, heads=2)


def test_no_masking_path():
    model = init_dsmae(0, "S", 1.0, **DIMS)
    x = torch.rand(16, 16)
    recon, plan = mae_forward(x, model, 3)
    assert plan.masked == ()
    enc = model.dose_encoder(patchify(x[None], 4))
    expected = model.head(enc)
    assert torch.allclose(patchify(recon, 4), expected[0], atol=1e-6)


def test_deterministic():
    model = init_dsmae(0, "L", 0.25, **DIMS)
    x = torch.rand(16, 16)
    a, pa = mae_forward(x, model, 5)
    b, pb = mae_forward(x, model, 5)
    assert pa == pb and torch.equal(a, b)


def test_bias_only_head_gives_constant():
    model = DsMAE("L", 0.5, slice_size=16, patch=4, dim=8, depth=0, heads=2)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        model.head.bias.fill_(0.37)
    recon, _ = mae_forward(torch.rand(16, 16), model, 0)
    assert torch.allclose(recon, torch.full((16, 16), 0.37))


def test_masked_pixels_do_not_matter():
    model = init_dsmae(1, "S", 0.25, **DIMS)
    x = torch.rand(16, 16)
    plan = model.plans([9])[0]
    y = patchify(x.clone(), 4)
    y[list(plan.masked)] = torch.rand(len(plan.masked), 16)
    from s3pet.tokenizer import unpatchify
    y = unpatchify(y, 16, 16, 4)
    assert not torch.equal(x, y)
    assert torch.equal(model(x[None], [plan]), model(y[None], [plan]))


def test_shape_and_config_errors():
    model = init_dsmae(0, "S", 0.25, **DIMS)
    with pytest.raises(ShapeError):
        model(torch.rand(1, 8, 8), model.plans([0]))
    with pytest.raises(ShapeError):
        model(torch.rand(2, 16, 16), model.plans([0]))
    with pytest.raises(ConfigError):
        DsMAE("X", 0.5)
    with pytest.raises(ConfigError):
        DsMAE("L", 0.0)


def test_non_finite_head_tagged():
    model = init_dsmae(0, "S", 0.25, **DIMS)
    with torch.no_grad():
        model.head.bias[0] = float("nan")
    with pytest.raises(NumericError, match="mae_head"):
        mae_forward(torch.rand(16, 16), model, 0)


def test_loss_cases():
    a = torch.rand(8, 8)
    assert stage1_loss(a, a) == 0
    assert stage1_loss(a, a + 0.2).item() == pytest.approx(0.2, abs=1e-6)
    with pytest.raises(ShapeError):
        stage1_loss(a, torch.rand(4, 4))


def test_loss_loop_oracle(rng):
    a, b = rng.random((3, 5, 7)), rng.random((3, 5, 7))
    total = 0.0
    for i in range(3):
        for j in range(5):
            for k in range(7):
                total += abs(a[i, j, k] - b[i, j, k])
    assert stage1_loss(torch.from_numpy(a), torch.from_numpy(b)).item() == pytest.approx(total / a.size, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_loss_symmetric_non_negative(seed):
    g = np.random.default_rng(seed)
    a, b = torch.from_numpy(g.random((2, 4, 4))), torch.from_numpy(g.random((2, 4, 4)))
    assert stage1_loss(a, b) == stage1_loss(b, a) >= 0
    assert (stage1_loss(a, b) == 0) == torch.equal(a, b)
