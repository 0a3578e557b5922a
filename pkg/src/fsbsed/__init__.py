"""Regularised supervised contrastive pre-training and prototypical few-shot
detection of bioacoustic sound events."""

from .audio import FeatureConfig, MelPatch, Waveform, load_audio, mel_spectrogram, slice_patch
from .backbone import EncoderSpec, FewShotNet, ProjectorSpec, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, save_config
from .detection import DetectConfig, detect, labels_to_events, post_process
from .evaluation import aggregate_runs, iou, match_events, prf
from .fewshot import AdaptConfig, Episode, Prototypes, build_episode, compute_prototypes, finetune
from .losses import (
    LossConfig,
    effective_rank,
    finetune_proto_loss,
    ntxent_loss,
    pretrain_loss,
    protonets_loss,
    scl_loss,
    total_coding_rate,
)
from .pretrain import SourceDataset, TrainConfig, pretrain

__version__ = "0.1.0"
