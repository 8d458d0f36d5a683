"""Bilateral fine-tuning network and its ablation variants."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .decoder import DoseDecoder, fuse_tokens
from .dkd import DKD, alignment_loss
from .dkl import Transfer, token_swap, transfer_loss
from .encoder import DoseEncoder, init_weights_
from .errors import ConfigError
from .tokenizer import patchify

# name -> (uses pretrained encoders, uses DKD, uses DKL); fixed ablation order
VARIANTS = {
    "baseline": (False, False, False),
    "dsmae": (True, False, False),
    "dsmae_dkd": (True, True, False),
    "full": (True, True, True),
}


@dataclass
class ModelConfig:
    slice_size: int = 64
    patch: int = 8
    dim: int = 64
    depth: int = 4
    heads: int = 4
    keep_l: float = 0.15
    keep_s: float = 0.25
    transfer_depth: int = 1

    def validate(self) -> None:
        if self.slice_size % self.patch:
            raise ConfigError(f"slice size {self.slice_size} not divisible by patch {self.patch}")
        if self.dim % self.heads or self.dim % 4:
            raise ConfigError(f"dim {self.dim} must be divisible by heads {self.heads} and by 4")
        if self.depth < 0 or self.transfer_depth < 1:
            raise ConfigError("depth must be >= 0 and transfer_depth >= 1")
        if not (0 < self.keep_l < self.keep_s <= 1):
            raise ConfigError(f"need 0 < keep_l < keep_s <= 1, got {self.keep_l}, {self.keep_s}")
        grid = self.slice_size // self.patch
        if grid * 8 != self.slice_size:
            raise ConfigError("decoder recovers 8x the token grid; patch size must be 8")

    @property
    def grid(self) -> int:
        return self.slice_size // self.patch

    def dims(self) -> dict:
        return dict(slice_size=self.slice_size, patch=self.patch, dim=self.dim, depth=self.depth, heads=self.heads)


class S3PETNet(nn.Module):
    def __init__(self, cfg: ModelConfig, variant: str = "full"):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {list(VARIANTS)}")
        cfg.validate()
        self.cfg = cfg
        self.variant = variant
        _, self.use_dkd, self.use_dkl = VARIANTS[variant]
        self.enc_L = DoseEncoder(cfg.patch, cfg.grid, cfg.dim, cfg.depth, cfg.heads)
        self.enc_S = DoseEncoder(cfg.patch, cfg.grid, cfg.dim, cfg.depth, cfg.heads)
        self.dkd = DKD(cfg.dim) if self.use_dkd else None
        self.transfer = Transfer(cfg.dim, cfg.transfer_depth) if self.use_dkl else None
        self.dec_aux = DoseDecoder(cfg.dim)
        self.dec_master = DoseDecoder(cfg.dim)

    def encode(self, x: torch.Tensor, dose: str) -> torch.Tensor:
        enc = self.enc_L if dose == "L" else self.enc_S
        return enc(patchify(x, self.cfg.patch))

    def forward(self, x_l: torch.Tensor, x_s: torch.Tensor, frozen_target: torch.Tensor | None = None) -> dict:
        """Both branches on a paired ``(B, H, W)`` batch.

        ``frozen_target`` replaces the SPET-specific transfer target with a
        given constant; used only by finite-difference checks.
        """
        e_l, e_s = self.encode(x_l, "L"), self.encode(x_s, "S")
        zero = e_l.new_zeros(())
        out = {"align": zero, "transfer": zero}
        if not self.use_dkd:
            out["pred_s"] = self.dec_master(fuse_tokens(e_l, e_l))
            out["pred_l"] = self.dec_aux(fuse_tokens(e_s, e_s))
            return out
        l = self.dkd.decouple(e_l, "L")
        s = self.dkd.decouple(e_s, "S")
        out["align"] = alignment_loss(l.dose_invariant, s.dose_invariant)
        if not self.use_dkl:
            out["pred_s"] = self.dec_master(fuse_tokens(l.dose_specific, l.dose_invariant))
            out["pred_l"] = self.dec_aux(fuse_tokens(s.dose_specific, s.dose_invariant))
            return out
        l_sw, s_sw = token_swap(l, s)
        s_ds_pred = self.transfer(l.dose_specific)
        target = l_sw.dose_specific if frozen_target is None else frozen_target
        out["transfer"] = transfer_loss(target, s_ds_pred)
        out["s_ds"] = l_sw.dose_specific
        # master decodes the transferred tokens in place of the true swapped s_ds
        out["pred_s"] = self.dec_master(fuse_tokens(s_ds_pred, l_sw.dose_invariant))
        out["pred_l"] = self.dec_aux(fuse_tokens(s_sw.dose_specific, s_sw.dose_invariant))
        return out

    def reconstruct(self, x_l: torch.Tensor) -> torch.Tensor:
        """Master-branch RPET from LPET alone."""
        e_l = self.encode(x_l, "L")
        if not self.use_dkd:
            return self.dec_master(fuse_tokens(e_l, e_l))
        l = self.dkd.decouple(e_l, "L")
        spec = self.transfer(l.dose_specific) if self.use_dkl else l.dose_specific
        return self.dec_master(fuse_tokens(spec, l.dose_invariant))


def init_network(seed: int, cfg: ModelConfig, variant: str = "full") -> S3PETNet:
    net = S3PETNet(cfg, variant)
    gen = torch.Generator().manual_seed(int(seed))
    init_weights_(net, gen)
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu", generator=gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return net
