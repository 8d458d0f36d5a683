import pytest
import torch

from s3pet.encoder import Attention, DoseEncoder, TransformerEncoder, encode, init_encoder
from s3pet.errors import ConfigError, NumericError


def test_zero_depth_is_identity():
    x = torch.randn(2, 4, 8)
    assert torch.equal(init_encoder(0, 8, 0, 2)(x), x)


def test_shape_preserved():
    enc = init_encoder(0, 16, 2, 4)
    assert enc(torch.randn(3, 9, 16)).shape == (3, 9, 16)


def test_permutation_equivariance():
    enc = init_encoder(1, 8, 1, 2)
    for p in enc.parameters():
        torch.nn.init.normal_(p, std=0.5)
    x = torch.randn(6, 8)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
    assert (enc(x)[perm] - enc(x[perm])).abs().max() < 1e-5


def test_init_deterministic_and_statistics():
    a, b = init_encoder(5, 64, 4, 4), init_encoder(5, 64, 4, 4)
    for (n, p), q in zip(a.named_parameters(), b.parameters()):
        assert torch.equal(p, q), n
        if n.endswith("bias"):
            assert not p.any()
    weights = torch.cat([p.flatten() for n, p in a.named_parameters()
                         if n.endswith("weight") and "norm" not in n])
    assert 0.015 <= weights.std().item() <= 0.025
    for n, p in a.named_parameters():
        if "norm" in n:
            assert torch.all(p == (1.0 if n.endswith("weight") else 0.0))


def test_bad_heads():
    with pytest.raises(ConfigError):
        init_encoder(0, 10, 1, 4)
    with pytest.raises(ConfigError):
        Attention(10, 4)


def test_attention_rows_sum_to_one():
    att = Attention(8, 2)
    w = att.weights(torch.randn(2, 5, 8))
    assert w.shape == (2, 2, 5, 5)
    assert torch.allclose(w.sum(-1), torch.ones(2, 2, 5), atol=1e-6)


def test_attention_matches_manual_heads():
    torch.manual_seed(0)
    att = Attention(8, 2).double()
    x = torch.randn(5, 8, dtype=torch.float64)
    q, k, v = att.q(x), att.k(x), att.v(x)
    heads = []
    for h in range(2):
        s = slice(4 * h, 4 * h + 4)
        a = torch.softmax(q[:, s] @ k[:, s].T / 2.0, dim=-1)
        heads.append(a @ v[:, s])
    expected = att.out(torch.cat(heads, dim=-1))
    assert torch.allclose(att(x), expected, atol=1e-12)


def test_non_finite_reports_block():
    enc = init_encoder(0, 8, 2, 2)
    with torch.no_grad():
        enc.blocks[1].fc2.bias.fill_(float("inf"))
    with pytest.raises(NumericError, match="block 1"):
        enc(torch.randn(4, 8))


def test_wrong_dim_rejected():
    with pytest.raises(ConfigError):
        encode(torch.randn(4, 6), TransformerEncoder(8, 1, 2))


def test_dose_encoder_finite_difference():
    torch.manual_seed(0)
    enc = DoseEncoder(2, 2, 8, 1, 2).double()
    x = torch.rand(1, 4, 4, dtype=torch.float64)
    w = torch.randn(1, 4, 8, dtype=torch.float64)

    def f():
        return (enc(x) * w).sum()

    enc.zero_grad()
    f().backward()
    for name, p in enc.named_parameters():
        idx = tuple(0 for _ in p.shape)
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + 1e-6
            plus = f().item()
            p[idx] = orig - 1e-6
            minus = f().item()
            p[idx] = orig
        fd = (plus - minus) / 2e-6
        assert abs(fd - p.grad[idx].item()) <= 1e-6 * max(1.0, abs(fd)), name
