import pytest
import torch

from s3pet.decoder import DoseDecoder, decode, fuse_tokens
from s3pet.errors import NumericError, ShapeError


def test_fuse_shapes_and_mapping():
    spec, inv = torch.randn(2, 64, 64), torch.randn(2, 64, 64)
    fmap = fuse_tokens(spec, inv)
    assert fmap.shape == (2, 128, 8, 8)
    for i, j, c in ((0, 0, 0), (3, 5, 17), (7, 7, 63)):
        assert fmap[1, c, i, j] == spec[1, i * 8 + j, c]
        assert fmap[1, 64 + c, i, j] == inv[1, i * 8 + j, c]
    swapped = fuse_tokens(inv, spec)
    assert torch.equal(swapped[:, :64], fmap[:, 64:]) and torch.equal(swapped[:, 64:], fmap[:, :64])


def test_fuse_errors():
    with pytest.raises(ShapeError):
        fuse_tokens(torch.randn(1, 10, 4), torch.randn(1, 10, 4))
    with pytest.raises(ShapeError):
        fuse_tokens(torch.randn(1, 4, 4), torch.randn(1, 4, 8))


def test_decoder_structure_and_shape():
    dec = DoseDecoder(64)
    assert len(dec.blocks) == 4
    assert [b[0].in_channels for b in dec.blocks] == [128, 64, 32, 16]
    assert all(b[0].bias is None for b in dec.blocks)
    out = dec(torch.randn(2, 128, 8, 8))
    assert out.shape == (2, 64, 64)
    assert torch.all((out > 0) & (out < 1))


def test_eval_deterministic():
    dec = DoseDecoder(8).eval()
    x = torch.randn(3, 16, 2, 2)
    assert torch.equal(decode(x, dec), decode(x, dec))


def test_zero_weights_give_half():
    dec = DoseDecoder(8)
    with torch.no_grad():
        for p in dec.parameters():
            p.zero_()
    for mode in (dec.train, dec.eval):
        mode()
        assert torch.allclose(dec(torch.randn(2, 16, 2, 2)), torch.full((2, 16, 16), 0.5))


def test_batchnorm_modes():
    dec = DoseDecoder(8)
    x = torch.randn(1, 16, 2, 2).expand(4, -1, -1, -1)
    out = dec.train()(x)
    assert torch.allclose(out, out[:1].expand_as(out))
    bn = dec.blocks[0][1]
    assert bn.momentum == 0.1
    before = bn.running_mean.clone()
    dec(torch.randn(4, 16, 2, 2))
    assert not torch.equal(before, bn.running_mean)
    dec.eval()
    frozen = bn.running_mean.clone()
    out = dec(x)
    assert torch.equal(frozen, bn.running_mean)
    assert torch.allclose(out, out[:1].expand_as(out))


def test_channel_error_and_non_finite():
    dec = DoseDecoder(8)
    with pytest.raises(ShapeError):
        dec(torch.randn(1, 8, 2, 2))
    with torch.no_grad():
        dec.blocks[2][1].bias.fill_(float("inf"))
    with pytest.raises(NumericError, match="block 2"):
        dec(torch.randn(2, 16, 2, 2))


def test_decoder_finite_differences():
    torch.manual_seed(0)
    dec = DoseDecoder(8).double().train()
    x = torch.randn(3, 16, 2, 2, dtype=torch.float64)
    w = torch.randn(3, 16, 16, dtype=torch.float64)

    def f():
        return (dec(x) * w).sum()

    f().backward()
    checked = 0
    for name, p in dec.named_parameters():
        idx = tuple(0 for _ in p.shape)
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + 1e-6
            plus = f().item()
            p[idx] = orig - 1e-6
            minus = f().item()
            p[idx] = orig
        fd = (plus - minus) / 2e-6
        assert abs(fd - p.grad[idx].item()) <= 1e-4 * max(1.0, abs(fd)), name
        checked += 1
    assert checked == len(list(dec.parameters()))
