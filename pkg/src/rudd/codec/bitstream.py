"""The ``.rudd`` container: a whole distilled dataset in one byte string.

Layout (little-endian):

    header (32 bytes)
        4s  magic "RUDD"        u16 version
        u32 K classes           u32 N samples
        u16 H                   u16 W
        u8  L scales            u8  C context length
        u16 entropy width       u8  entropy depth
        u8  decoder preset id (255 = custom)
        u16 D1                  u16 D2
        u32 slice size
    per slice, ceil(N / slice size) times:
        varint len | entropy-net payload
        varint len | decoder payload
        per sample in the slice: varint len | latent payload
    labels: ceil(log2 K) bits each, MSB first, zero-padded to a byte
    u32 CRC32 of everything above

A network payload is ``f64 step, f32 prior scale`` followed by the range-coded
integer grid indices of its weights under a zero-mean discretized Laplace
prior. A latent payload range-codes every scale in raster order under the
slice's entropy network, evaluated on the dequantized weights.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..decoder import DECODER_PRESETS, DecoderConfig, DecoderWeights, init_decoder
from ..entropy_model import (
    EntropyNetConfig,
    EntropyNetWeights,
    NetWeights,
    NumpyPredictor,
    init_entropy_net,
    weight_prior_scale,
    weight_symbols,
)
from ..latents import QuantizedPyramid, pyramid_dims
from .rangecoder import LaplaceModel, RangeDecoder, RangeEncoder, TruncatedStreamError

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "BitstreamError",
    "SliceNetworks",
    "QuantizedDataset",
    "BitAllocation",
    "DatasetBitstream",
    "encode_dataset",
    "decode_dataset",
    "read_header",
    "label_bits_per_sample",
    "encode_weights",
    "decode_weights",
    "encode_latents",
    "decode_latents",
]

MAGIC = b"RUDD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIHHBBHBBHHI")
_CUSTOM_DECODER = 255
_PRESET_IDS = {v: i for i, v in enumerate(DECODER_PRESETS.values())}


class BitstreamError(ValueError):
    """Malformed, truncated or corrupted ``.rudd`` data."""


@dataclass
class SliceNetworks:
    """Quantized networks shared by one slice of samples."""

    entropy: EntropyNetWeights
    entropy_step: float
    decoder: DecoderWeights
    decoder_step: float


@dataclass
class QuantizedDataset:
    num_classes: int
    height: int
    width: int
    scales: int
    entropy_config: EntropyNetConfig
    decoder_config: DecoderConfig
    slice_size: int
    latents: list[QuantizedPyramid]
    labels: np.ndarray
    slices: list[SliceNetworks]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.latents)
        if len(self.labels) != n:
            raise ValueError("one label per latent pyramid required")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, K)")
        if self.slice_size < 1 or len(self.slices) != math.ceil(n / self.slice_size):
            raise ValueError(f"{len(self.slices)} slices do not cover {n} samples")

    @property
    def num_samples(self) -> int:
        return len(self.latents)

    def slice_members(self, s: int) -> range:
        return range(s * self.slice_size, min((s + 1) * self.slice_size, self.num_samples))


@dataclass
class BitAllocation:
    """Where the bits of a stream go. Components sum to the file size in bits."""

    explicit_bits: int  # latent codes
    implicit_bits: int  # entropy-network and decoder weights
    label_bits: int
    header_bits: int  # header, lengths, label padding, CRC

    @property
    def total_bits(self) -> int:
        return self.explicit_bits + self.implicit_bits + self.label_bits + self.header_bits

    def to_dict(self, num_classes: int | None = None) -> dict:
        d = asdict(self)
        total = self.total_bits
        d["total_bits"] = total
        d["explicit_fraction"] = self.explicit_bits / total if total else 0.0
        d["implicit_fraction"] = self.implicit_bits / total if total else 0.0
        if num_classes:
            d["num_classes"] = num_classes
            d["bpc"] = total / num_classes
        return d


@dataclass
class DatasetBitstream:
    data: bytes
    allocation: BitAllocation
    num_classes: int = field(default=0)

    @property
    def bpc(self) -> float:
        return 8 * len(self.data) / self.num_classes


def label_bits_per_sample(num_classes: int) -> int:
    return math.ceil(math.log2(num_classes)) if num_classes > 1 else 0


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        out.append(b | (0x80 if n else 0))
        if not n:
            return bytes(out)


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    n = shift = 0
    while True:
        if pos >= len(data):
            raise BitstreamError("truncated length field")
        b = data[pos]
        pos += 1
        n |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            return n, pos


def encode_weights(weights: NetWeights, step: float) -> bytes:
    symbols = weight_symbols(weights, step)
    scale = float(np.float32(weight_prior_scale(symbols)))
    enc = RangeEncoder()
    model = LaplaceModel(0.0, scale)
    for s in symbols.tolist():
        model.encode(enc, s)
    return struct.pack("<df", step, scale) + enc.finish()


def decode_weights(payload: bytes, template: NetWeights, dtype=torch.float32) -> tuple[NetWeights, float]:
    if len(payload) < 12:
        raise BitstreamError("weight payload too short")
    step, scale = struct.unpack_from("<df", payload)
    dec = RangeDecoder(payload[12:])
    model = LaplaceModel(0.0, scale)
    symbols = np.array([model.decode(dec) for _ in range(template.count)], dtype=np.int64)
    dec.check_consumed()
    return template.from_flat(symbols * step, dtype=dtype), step


def _coding_predictor(entropy: EntropyNetWeights, step: float) -> NumpyPredictor:
    # Both sides evaluate the network on exact grid values k * step.
    symbols = weight_symbols(entropy, step)
    return NumpyPredictor.from_weights(entropy.from_flat(symbols * step, dtype=torch.float64))


def encode_latents(pyramid: QuantizedPyramid, predictor: NumpyPredictor, context_length: int) -> bytes:
    enc = RangeEncoder()
    zeros = [0] * context_length
    for grid in pyramid.grids:
        values = zeros + grid.reshape(-1).tolist()
        for m in range(grid.size):
            ctx = np.array(values[m : m + context_length][::-1], dtype=np.float64)
            LaplaceModel(*predictor(ctx)).encode(enc, values[m + context_length])
    return enc.finish()


def decode_latents(
    payload: bytes, predictor: NumpyPredictor, context_length: int, height: int, width: int, scales: int
) -> QuantizedPyramid:
    dec = RangeDecoder(payload)
    dims, _ = pyramid_dims(height, width, scales)
    grids = []
    for h, w in dims:
        values = [0] * context_length
        for m in range(h * w):
            ctx = np.array(values[m : m + context_length][::-1], dtype=np.float64)
            values.append(LaplaceModel(*predictor(ctx)).decode(dec))
        grids.append(np.array(values[context_length:], dtype=np.int32).reshape(h, w))
    dec.check_consumed()
    return QuantizedPyramid(height, width, grids)


def _header_bytes(ds: QuantizedDataset) -> bytes:
    dc, ec = ds.decoder_config, ds.entropy_config
    if dc.latent_channels != ds.scales:
        raise ValueError("decoder input channels must equal the number of scales")
    dec_id = _PRESET_IDS.get((dc.d1, dc.d2), _CUSTOM_DECODER)
    return _HEADER.pack(
        MAGIC, FORMAT_VERSION, ds.num_classes, ds.num_samples, ds.height, ds.width,
        ds.scales, ec.context_length, ec.width, ec.depth, dec_id, dc.d1, dc.d2, ds.slice_size,
    )


def encode_dataset(ds: QuantizedDataset) -> DatasetBitstream:
    out = bytearray(_header_bytes(ds))
    explicit = implicit = 0
    c = ds.entropy_config.context_length
    for s, nets in enumerate(ds.slices):
        for payload in (
            encode_weights(nets.entropy, nets.entropy_step),
            encode_weights(nets.decoder, nets.decoder_step),
        ):
            out += _varint(len(payload)) + payload
            implicit += 8 * len(payload)
        predictor = _coding_predictor(nets.entropy, nets.entropy_step)
        for i in ds.slice_members(s):
            payload = encode_latents(ds.latents[i], predictor, c)
            out += _varint(len(payload)) + payload
            explicit += 8 * len(payload)
    bits = label_bits_per_sample(ds.num_classes)
    acc = 0
    for y in ds.labels.tolist():
        acc = (acc << bits) | y
    label_len = math.ceil(bits * ds.num_samples / 8)
    pad = 8 * label_len - bits * ds.num_samples
    out += (acc << pad).to_bytes(label_len, "big")
    out += struct.pack("<I", zlib.crc32(out))
    label_bits = bits * ds.num_samples
    alloc = BitAllocation(explicit, implicit, label_bits, 8 * len(out) - explicit - implicit - label_bits)
    return DatasetBitstream(bytes(out), alloc, ds.num_classes)


def _check_crc(data: bytes) -> None:
    if len(data) < _HEADER.size + 4:
        raise BitstreamError("stream shorter than header")
    if data[:4] != MAGIC:
        raise BitstreamError(f"bad magic {data[:4]!r}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise BitstreamError("CRC mismatch: stream is corrupted")


def read_header(data: bytes) -> dict:
    """Parsed header fields (validates magic and CRC)."""
    _check_crc(data)
    (_, version, k, n, h, w, l, c, ew, ed, dec_id, d1, d2, slice_size) = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise BitstreamError(f"unsupported format version {version}")
    return dict(
        num_classes=k, num_samples=n, height=h, width=w, scales=l, context_length=c,
        entropy_width=ew, entropy_depth=ed, decoder_id=dec_id, d1=d1, d2=d2, slice_size=slice_size,
    )


def decode_dataset(data: bytes, dtype=torch.float32) -> tuple[QuantizedDataset, BitAllocation]:
    hdr = read_header(data)
    k, n = hdr["num_classes"], hdr["num_samples"]
    h, w, l = hdr["height"], hdr["width"], hdr["scales"]
    try:
        ec = EntropyNetConfig(hdr["context_length"], hdr["entropy_width"], hdr["entropy_depth"])
        dc = DecoderConfig(hdr["d1"], hdr["d2"], l)
    except ValueError as exc:
        raise BitstreamError(str(exc)) from exc
    ent_template = init_entropy_net(ec, zero=True, dtype=torch.float64)
    dec_template = init_decoder(dc, zero=True, dtype=torch.float64)
    slice_size = hdr["slice_size"]
    num_slices = math.ceil(n / slice_size) if slice_size else 0
    if n and not num_slices:
        raise BitstreamError("zero slice size")
    pos = _HEADER.size
    end = len(data) - 4
    explicit = implicit = 0

    def take() -> bytes:
        nonlocal pos
        length, pos = _read_varint(data, pos)
        if pos + length > end:
            raise BitstreamError("truncated payload")
        chunk = data[pos : pos + length]
        pos += length
        return chunk

    slices, latents = [], []
    try:
        for s in range(num_slices):
            p = take()
            ent, q_e = decode_weights(p, ent_template, dtype)
            implicit += 8 * len(p)
            p = take()
            dec, q_d = decode_weights(p, dec_template, dtype)
            implicit += 8 * len(p)
            slices.append(SliceNetworks(ent, q_e, dec, q_d))
            predictor = _coding_predictor(ent, q_e)
            for _ in range(s * slice_size, min((s + 1) * slice_size, n)):
                p = take()
                latents.append(decode_latents(p, predictor, ec.context_length, h, w, l))
                explicit += 8 * len(p)
    except TruncatedStreamError as exc:
        raise BitstreamError(str(exc)) from exc
    bits = label_bits_per_sample(k)
    label_len = math.ceil(bits * n / 8)
    if pos + label_len != end:
        raise BitstreamError("label section size mismatch")
    acc = int.from_bytes(data[pos:end], "big") >> (8 * label_len - bits * n)
    mask = (1 << bits) - 1
    labels = np.array([(acc >> (bits * (n - 1 - i))) & mask for i in range(n)], dtype=np.int64)
    ds = QuantizedDataset(k, h, w, l, ec, dc, slice_size, latents, labels, slices)
    label_bits = bits * n
    alloc = BitAllocation(explicit, implicit, label_bits, 8 * len(data) - explicit - implicit - label_bits)
    return ds, alloc
