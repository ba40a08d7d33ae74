"""Range coding, the ``.rudd`` dataset container and bit accounting."""

from .accounting import LabelRate, bpc, label_rate_bits, raw_bpc, soft_label_rate_bound
from .bitstream import (
    BitAllocation,
    BitstreamError,
    DatasetBitstream,
    QuantizedDataset,
    SliceNetworks,
    decode_dataset,
    encode_dataset,
    read_header,
)
from .rangecoder import FrequencyModel, LaplaceModel, RangeDecoder, RangeEncoder, range_decode, range_encode

__all__ = [
    "BitAllocation",
    "BitstreamError",
    "DatasetBitstream",
    "FrequencyModel",
    "LabelRate",
    "LaplaceModel",
    "QuantizedDataset",
    "RangeDecoder",
    "RangeEncoder",
    "SliceNetworks",
    "bpc",
    "decode_dataset",
    "encode_dataset",
    "label_rate_bits",
    "range_decode",
    "range_encode",
    "raw_bpc",
    "read_header",
    "soft_label_rate_bound",
]
