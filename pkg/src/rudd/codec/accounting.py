"""Storage accounting: bits per class and label rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bitstream import DatasetBitstream, label_bits_per_sample, read_header

__all__ = ["bpc", "raw_bpc", "LabelRate", "label_rate_bits", "soft_label_rate_bound"]


def bpc(stream: DatasetBitstream | bytes, num_classes: int | None = None) -> float:
    """Total stream bits divided by the class count stored in its header."""
    data = stream.data if isinstance(stream, DatasetBitstream) else bytes(stream)
    k = read_header(data)["num_classes"] if num_classes is None else num_classes
    if k <= 0:
        raise ValueError("number of classes must be positive")
    return 8 * len(data) / k


def raw_bpc(height: int, width: int, channels: int = 3, bit_depth: int = 32, per_class: int = 1) -> int:
    """Bits per class of uncompressed images."""
    return height * width * channels * bit_depth * per_class


@dataclass(frozen=True)
class LabelRate:
    stored_bits: int  # fixed-length code actually written per label
    entropy_bound: float  # Entropy(labels) + 1


def label_rate_bits(num_classes: int, labels=None) -> LabelRate:
    """Per-label cost of hard labels.

    Without ``labels`` the entropy term assumes a uniform class distribution,
    giving ``log2 K + 1``.
    """
    if num_classes < 1:
        raise ValueError("need at least one class")
    if labels is None:
        h = math.log2(num_classes)
    else:
        counts = np.bincount(np.asarray(labels), minlength=num_classes).astype(np.float64)
        p = counts[counts > 0] / counts.sum()
        h = float(-(p * np.log2(p)).sum())
    return LabelRate(label_bits_per_sample(num_classes), h + 1.0)


def soft_label_rate_bound(num_classes: int, eps: float) -> float:
    """``log2`` of the number of eps-cells in the (K-1)-simplex.

    ``-log2((K-1)!) - (K-1) * log2(eps)``, using ``lgamma`` for the factorial.
    """
    if num_classes < 2 or not 0.0 < eps < 1.0:
        raise ValueError("need K >= 2 and 0 < eps < 1")
    k1 = num_classes - 1
    return -math.lgamma(num_classes) / math.log(2.0) - k1 * math.log2(eps)
