"""Rate-utility dataset distillation: compact synthetic datasets stored as coded latents."""

from .codec import bpc, decode_dataset, encode_dataset, raw_bpc
from .data import LabeledImageSet, generate_toy, load_images
from .distill import DistillConfig, evaluate, run_algorithm1

__version__ = "0.1.0"

__all__ = [
    "DistillConfig",
    "LabeledImageSet",
    "bpc",
    "decode_dataset",
    "encode_dataset",
    "evaluate",
    "generate_toy",
    "load_images",
    "raw_bpc",
    "run_algorithm1",
]
