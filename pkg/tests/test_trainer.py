import numpy as np
import pytest
import torch

from s3pet.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, module_tensors
from s3pet.datagen import ImageVolume
from s3pet.dsmae import init_dsmae
from s3pet.errors import ConfigError
from s3pet.network import ModelConfig
from s3pet.trainer import (
    TrainConfig, augment_draw, batches, dihedral, dsmae_from_checkpoint, finetune_stage2, infer, network_from_checkpoint,
    pretrain_stage1,
)

TINY = ModelConfig(slice_size=16, patch=8, dim=8, depth=1, heads=2, keep_l=0.25, keep_s=0.5)


def _slices(n, seed=0):
    return np.random.default_rng(seed).random((n, 16, 16), dtype=np.float32)


@pytest.fixture(scope="module")
def stage1():
    x = _slices(6)
    tcfg = TrainConfig(epochs=1, max_steps=4, batch_size=3, seed=1)
    return pretrain_stage1(x, "L", TINY, tcfg)[0], pretrain_stage1(x, "S", TINY, tcfg)[0]


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(lr=-1.0), dict(dtype="float16"), dict(max_steps=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    assert TrainConfig(epochs=3, batch_size=4).total_steps(10) == 9
    assert TrainConfig(epochs=3, batch_size=4, max_steps=5).total_steps(10) == 5


def test_batches_cover_each_epoch():
    cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
    got = list(batches(10, cfg))
    assert [s for s, _ in got] == list(range(6))
    first = np.concatenate([i for _, i in got[:3]])
    assert sorted(first) == list(range(10))
    second = np.concatenate([i for _, i in got[3:]])
    assert not np.array_equal(first, second)
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(got, batches(10, cfg)))


def test_pretrain_zero_lr_keeps_init():
    x = _slices(1)
    ckpt, hist = pretrain_stage1(x, "S", TINY, TrainConfig(epochs=1, lr=0.0, seed=2))
    init = module_tensors(init_dsmae(2, "S", TINY.keep_s, **TINY.dims()))
    assert len(hist) == 1
    assert all(np.array_equal(init[k], ckpt.tensors[k]) for k in init)


def test_pretrain_deterministic_and_logged(tmp_path):
    x = _slices(5)
    tcfg = TrainConfig(epochs=2, batch_size=2, seed=4)
    a, ha = pretrain_stage1(x, "L", TINY, tcfg, log_path=tmp_path / "log.csv")
    b, hb = pretrain_stage1(x, "L", TINY, tcfg)
    assert ha == hb and encode_checkpoint(a) == encode_checkpoint(b)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 1 + len(ha)
    assert a.stage == "I" and a.meta["dose"] == "L"
    assert dsmae_from_checkpoint(a).dose == "L"


def test_pretrain_empty_rejected():
    with pytest.raises(ConfigError):
        pretrain_stage1(np.zeros((0, 16, 16), np.float32), "S", TINY, TrainConfig())


def test_finetune_zero_lr_keeps_pretrained(stage1):
    ck_l, ck_s = stage1
    out, _ = finetune_stage2(_slices(3, 1), _slices(3, 2), ck_l, ck_s, TINY, TrainConfig(epochs=1, lr=0.0))
    for dose, src in (("L", ck_l), ("S", ck_s)):
        for k, v in src.subset("dose_encoder.").items():
            assert out.tensors[f"enc_{dose}.{k}"].tobytes() == v.tobytes()


def test_finetune_report_consistency_and_log(stage1, tmp_path):
    seen = []
    ck, hist = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY,
                               TrainConfig(epochs=3, batch_size=2, seed=5), log_path=tmp_path / "s2.csv",
                               on_step=lambda step, rep, net: seen.append(step))
    assert seen == list(range(6))
    for r in hist:
        assert abs(r.total - (r.align + r.transfer + 5.0 * r.rec)) <= 1e-6
    lines = (tmp_path / "s2.csv").read_text().splitlines()
    assert lines[0] == "step,align,transfer,rec,total" and len(lines) == 7
    assert ck.stage == "II" and ck.meta["variant"] == "full"


def test_finetune_shared_projector_stays_shared(stage1):
    ck, _ = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY, TrainConfig(epochs=5, batch_size=2))
    net = network_from_checkpoint(ck)
    assert net.dkd.invariant_for("L").weight is net.dkd.invariant_for("S").weight
    assert not any("invariant_" in k for k in ck.tensors)


def test_finetune_errors(stage1):
    x = _slices(2)
    with pytest.raises(ConfigError):
        finetune_stage2(x, x[:1], *stage1, TINY, TrainConfig())
    with pytest.raises(ConfigError):
        finetune_stage2(x, x, None, None, TINY, TrainConfig(), variant="full")
    with pytest.raises(ConfigError):
        finetune_stage2(x, x, stage1[1], stage1[0], TINY, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        finetune_stage2(x, x, *stage1, TINY, TrainConfig(), variant="bogus")
    other = ModelConfig(slice_size=16, patch=8, dim=16, depth=1, heads=2, keep_l=0.25, keep_s=0.5)
    with pytest.raises(ConfigError):
        finetune_stage2(x, x, *stage1, other, TrainConfig(epochs=1))


def test_baseline_needs_no_pretraining():
    ck, _ = finetune_stage2(_slices(2), _slices(2, 1), None, None, TINY, TrainConfig(epochs=1), variant="baseline")
    assert ck.meta["variant"] == "baseline"


def test_infer_contract(stage1):
    ck, _ = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY, TrainConfig(epochs=2, batch_size=2))
    vol = ImageVolume(_slices(3, 7))
    a, b = infer(vol, ck), infer(vol, ck)
    assert a.dims == vol.dims and a.data.tobytes() == b.data.tobytes()
    c = infer(vol, decode_checkpoint(encode_checkpoint(ck)))
    assert c.data.tobytes() == a.data.tobytes()
    with pytest.raises(ConfigError):
        infer(vol, stage1[0])
    with pytest.raises(ConfigError):
        infer(ImageVolume(np.zeros((1, 8, 8), np.float32)), ck)


def test_network_from_checkpoint_requires_stage_two():
    with pytest.raises(ConfigError):
        network_from_checkpoint(Checkpoint({}, {"stage": "I"}))


def test_float64_training_runs(stage1):
    ck, hist = finetune_stage2(_slices(2), _slices(2, 1), None, None, TINY,
                               TrainConfig(epochs=2, dtype="float64"), variant="baseline")
    assert np.isfinite(hist[-1].total)
    assert torch.is_tensor(torch.from_numpy(ck.tensors["dec_master.head.weight"]))


def test_dihedral_group():
    x = torch.arange(16.0).reshape(1, 4, 4)
    images = {dihedral(x, k, f).numpy().tobytes() for k in range(4) for f in (False, True)}
    assert len(images) == 8
    assert torch.equal(dihedral(dihedral(x, 1, False), 3, False), x)
    assert dihedral(x, 1, False)[0, 0, 0] == x[0, 0, 3]


def test_augment_draws_cover_group():
    draws = [augment_draw(0, s) for s in range(400)]
    assert draws == [augment_draw(0, s) for s in range(400)]
    assert len(set(draws)) == 8


def test_augmented_finetune_deterministic(stage1):
    tcfg = TrainConfig(epochs=3, batch_size=2, augment=True)
    a, ha = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY, tcfg)
    b, hb = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY, tcfg)
    c, _ = finetune_stage2(_slices(4, 1), _slices(4, 2), *stage1, TINY, TrainConfig(epochs=3, batch_size=2))
    assert ha == hb and encode_checkpoint(a) == encode_checkpoint(b)
    assert encode_checkpoint(a) != encode_checkpoint(c)
