"""Two-stage sketch-to-image GAN for small medical-style image corpora, built on a numpy autodiff core."""

from .config import TrainConfig
from .dataset import ImageDataset, load_dataset, make_toy_corpus
from .metrics import MetricReport, MsSsimParams, SwdParams, auc, frechet_distance, ms_ssim, swd
from .progressive import ProgressiveDiscriminator, ProgressiveGenerator, ResolutionSchedule
from .render import PatchDiscriminator, UNetRenderer
from .sketch import SketchDraft, SketchParams, extract_sketch
from .training import (
    TrainState,
    augmentation_pretrain,
    full_train,
    generate_pairs,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "ImageDataset", "MetricReport", "MsSsimParams", "PatchDiscriminator", "ProgressiveDiscriminator",
    "ProgressiveGenerator", "ResolutionSchedule", "SketchDraft", "SketchParams", "SwdParams", "TrainConfig",
    "TrainState", "UNetRenderer", "augmentation_pretrain", "auc", "extract_sketch", "frechet_distance",
    "full_train", "generate_pairs", "load_checkpoint", "load_dataset", "make_toy_corpus", "ms_ssim",
    "save_checkpoint", "swd",
]
