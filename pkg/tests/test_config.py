import pytest

from fsbsed.augment import Param
from fsbsed.config import RunConfig, from_sections, load_config, save_config, to_sections


def test_defaults_record_training_constants(tmp_path):
    path = save_config(RunConfig(), tmp_path / "c.ini")
    text = path.read_text()
    for line in ("temperature = 0.06", "tcr_lambda = 0.0001", "tcr_eps2 = 0.05", "pretrain_loss = scl_tcr",
                 "sm = beta(5,2)", "pool_kernels = 2x2,2x2,1x2", "iou_min = 0.3"):
        assert line in text
    cfg = RunConfig()
    assert (cfg.train.lr, cfg.train.batch_size, cfg.train.epochs) == (0.01, 128, 100)
    assert (cfg.adapt.lr, cfg.adapt.epochs) == (0.01, 40)
    assert cfg.features.patch_frames == 17 and cfg.detect.views == 5


def test_round_trip_is_lossless(tmp_path):
    cfg = load_config(None, ["train.epochs=7", "losses.finetune_loss=scl", "backbone.block_widths=8,16,32",
                             "augment.light_pg=fixed(1)", "detect.merge_gap_s=0.2", "run.seeds=0,1,2"])
    again = load_config(save_config(cfg, tmp_path / "c.ini"))
    assert again == cfg
    assert again.train.epochs == 7 and again.seeds == (0, 1, 2)
    assert again.light_policy.get("pg") == Param("fixed", 1.0)
    assert again.adapt_config().loss == "scl"


def test_overrides_and_errors(tmp_path):
    assert load_config(None, ["adapt.freeze_norm_stats=false"]).adapt.freeze_norm_stats is False
    assert load_config(None, ["detect.merge_gap_s=none"]).detect.merge_gap_s is None
    with pytest.raises(KeyError):
        load_config(None, ["train.nonsense=1"])
    with pytest.raises(ValueError):
        load_config(None, ["no_dot=1"])
    with pytest.raises(ValueError):
        load_config(None, ["losses.finetune_loss=magic"])
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


def test_lambda_zero_unless_tcr():
    cfg = from_sections({"losses": {"pretrain_loss": "scl"}})
    assert cfg.train.loss_config().tcr_lambda == 0.0
    assert to_sections(cfg)["losses"]["tcr_lambda"] == "0.0001"
