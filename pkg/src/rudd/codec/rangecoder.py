"""Carry-propagating range coder with 16-bit frequencies.

The coder state is a 48-bit ``low`` window (plus a carry bit) and a range in
``[2**32, 2**48]``; renormalization shifts out 16-bit words. A pending
"cache" word absorbs carries, as in LZMA's coder. ``finish`` writes only as
many bits as are needed to identify the final interval and drops trailing
zero bytes, which the decoder reads back as implicit zeros.

Symbol models quantize probabilities to integer frequencies summing to
``2**16`` with every symbol at least 1, so no symbol costs more than 16 bits.
"""

from __future__ import annotations

import bisect
import math
from typing import Callable, Protocol, Sequence

__all__ = [
    "TOTAL_BITS",
    "TOTAL",
    "RangeEncoder",
    "RangeDecoder",
    "SymbolModel",
    "FrequencyModel",
    "LaplaceModel",
    "range_encode",
    "range_decode",
    "TruncatedStreamError",
]

TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS

_WORD = 16
_WINDOW = 48
_TOP = 1 << _WINDOW
_BOTTOM = 1 << (_WINDOW - _WORD)
_WORD_MASK = (1 << _WORD) - 1
_SHIFT = _WINDOW - _WORD
_LOW_MASK = (1 << _SHIFT) - 1

# Largest half-width of a Laplace model's explicit alphabet.
MAX_RADIUS = 4096
# Raw escape payload: a signed value in this many bits.
ESCAPE_BITS = 32


class TruncatedStreamError(ValueError):
    pass


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _TOP
        self._out = bytearray()
        self._cache: int | None = None
        self._pending = 0

    def encode(self, cum: int, freq: int, total_bits: int = TOTAL_BITS) -> None:
        """Narrow to ``[cum, cum + freq)`` out of ``2**total_bits``."""
        if freq <= 0 or cum < 0 or cum + freq > (1 << total_bits):
            raise ValueError(f"bad interval cum={cum} freq={freq} total=2**{total_bits}")
        r = self.range >> total_bits
        self.low += r * cum
        self.range = r * freq
        while self.range < _BOTTOM:
            self._shift_low()
            self.range <<= _WORD

    def encode_bits(self, value: int, nbits: int) -> None:
        """Store ``nbits`` raw bits (at most 16 per call)."""
        while nbits > 0:
            take = min(nbits, TOTAL_BITS)
            nbits -= take
            self.encode((value >> nbits) & ((1 << take) - 1), 1, take)

    def _emit(self, word: int) -> None:
        self._out += word.to_bytes(2, "big")

    def _shift_low(self) -> None:
        carry = self.low >> _WINDOW
        top = (self.low >> _SHIFT) & _WORD_MASK
        if self._cache is None:
            # First word: no earlier word exists that a carry could reach.
            self._cache = top
        elif carry or top != _WORD_MASK:
            self._emit(self._cache + carry)
            fill = (_WORD_MASK + carry) & _WORD_MASK
            for _ in range(self._pending):
                self._emit(fill)
            self._pending = 0
            self._cache = top
        else:
            self._pending += 1
        self.low = (self.low & _LOW_MASK) << _WORD

    def finish(self) -> bytes:
        # Pick the value in [low, low + range) with the most trailing zeros.
        low, hi = self.low, self.low + self.range - 1
        value = low
        if low != hi:
            k = (low ^ hi).bit_length()
            if low & ((1 << k) - 1):
                value = (hi >> (k - 1)) << (k - 1)
        self.low = value
        window = value & (_TOP - 1)
        if window == 0:
            words = 1
        else:
            trailing = (window & -window).bit_length() - 1
            words = _WINDOW // _WORD - trailing // _WORD
        for _ in range(words):
            self._shift_low()
        if self._cache is not None:
            self._emit(self._cache)
            for _ in range(self._pending):
                self._emit(_WORD_MASK)
        out = bytes(self._out)
        return out.rstrip(b"\x00")


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _TOP
        self.code = 0
        for _ in range(_WINDOW // _WORD):
            self.code = (self.code << _WORD) | self._next_word()

    def _next_word(self) -> int:
        chunk = self.data[self.pos : self.pos + 2]
        self.pos += 2
        if len(chunk) < 2:
            chunk = chunk + b"\x00" * (2 - len(chunk))
        return int.from_bytes(chunk, "big")

    def target(self, total_bits: int = TOTAL_BITS) -> int:
        self._r = self.range >> total_bits
        t = self.code // self._r
        limit = (1 << total_bits) - 1
        if t > limit:
            raise TruncatedStreamError("corrupt or truncated range-coded stream")
        return t

    def consume(self, cum: int, freq: int) -> None:
        """Remove the interval found via :meth:`target` (same ``total_bits``)."""
        self.code -= self._r * cum
        self.range = self._r * freq
        if self.code < 0 or self.code >= self.range:
            raise TruncatedStreamError("corrupt or truncated range-coded stream")
        while self.range < _BOTTOM:
            self.code = (self.code << _WORD) | self._next_word()
            self.range <<= _WORD

    def decode_bits(self, nbits: int) -> int:
        value = 0
        while nbits > 0:
            take = min(nbits, TOTAL_BITS)
            nbits -= take
            t = self.target(take)
            self.consume(t, 1)
            value = (value << take) | t
        return value

    def check_consumed(self) -> None:
        """Reject streams whose real bytes extend past what decoding used."""
        if len(self.data) > self.pos:
            raise TruncatedStreamError("trailing data after range-coded stream")


class SymbolModel(Protocol):
    def encode(self, enc: RangeEncoder, symbol: int) -> None: ...

    def decode(self, dec: RangeDecoder) -> int: ...


class FrequencyModel:
    """Explicit probability table over symbols ``0..n-1``."""

    def __init__(self, probs: Sequence[float]):
        n = len(probs)
        if n == 0 or n > TOTAL // 2:
            raise ValueError(f"alphabet size {n} unsupported")
        for p in probs:
            if not (0.0 < p <= 1.0):
                raise ValueError(f"probability {p} outside (0, 1]")
        s = math.fsum(probs)
        spare = TOTAL - n
        cum = [0]
        acc = 0.0
        for p in probs:
            acc += p / s
            cum.append(min(math.floor(acc * spare), spare) + len(cum))
        cum[-1] = TOTAL
        self.cum = cum

    def interval(self, symbol: int) -> tuple[int, int]:
        return self.cum[symbol], self.cum[symbol + 1] - self.cum[symbol]

    def encode(self, enc: RangeEncoder, symbol: int) -> None:
        enc.encode(*self.interval(symbol))

    def decode(self, dec: RangeDecoder) -> int:
        t = dec.target()
        s = bisect.bisect_right(self.cum, t) - 1
        dec.consume(*self.interval(s))
        return s


class LaplaceModel:
    """Integer-binned Laplace(mu, scale) over a window around ``round(mu)``.

    Symbols outside the window take an escape slot followed by a raw
    32-bit two's-complement value. Frequencies are ``floor(M * F) + index``,
    which keeps every slot nonzero and is evaluated identically on both
    sides of the coder.
    """

    __slots__ = ("mu", "scale", "lo", "hi", "_m", "_g0", "_esc")

    def __init__(self, mu: float, scale: float):
        self.mu = mu
        self.scale = scale
        center = math.floor(mu + 0.5)
        radius = min(max(math.ceil(11.5 * scale) + 1, 1), MAX_RADIUS)
        self.lo = center - radius
        self.hi = center + radius
        n = self.hi - self.lo + 1
        self._m = TOTAL - n - 1
        self._g0 = self._cdf(self.lo - 0.5)
        self._esc = self._cum(self.hi + 1)

    def _cdf(self, x: float) -> float:
        t = (x - self.mu) / self.scale
        if t < 0:
            return 0.5 * math.exp(max(t, -745.0))
        return 1.0 - 0.5 * math.exp(-min(t, 745.0))

    def _cum(self, k: int) -> int:
        mass = self._cdf(k - 0.5) - self._g0
        return math.floor(self._m * mass) + (k - self.lo)

    def interval(self, symbol: int) -> tuple[int, int]:
        if self.lo <= symbol <= self.hi:
            c = self._cum(symbol)
            return c, self._cum(symbol + 1) - c
        return self._esc, TOTAL - self._esc

    def encode(self, enc: RangeEncoder, symbol: int) -> None:
        enc.encode(*self.interval(symbol))
        if not self.lo <= symbol <= self.hi:
            enc.encode_bits(symbol & 0xFFFFFFFF, ESCAPE_BITS)

    def decode(self, dec: RangeDecoder) -> int:
        t = dec.target()
        if t >= self._esc:
            dec.consume(self._esc, TOTAL - self._esc)
            raw = dec.decode_bits(ESCAPE_BITS)
            return raw - (1 << 32) if raw & 0x80000000 else raw
        lo, hi = self.lo, self.hi + 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._cum(mid) <= t:
                lo = mid
            else:
                hi = mid
        dec.consume(*self.interval(lo))
        return lo


def range_encode(
    symbols: Sequence[int],
    prob_fn: Callable[[int, Sequence[int]], SymbolModel],
) -> bytes:
    """Code ``symbols``; ``prob_fn(i, history)`` supplies the model of symbol ``i``.

    The model must depend on ``history[:i]`` only (the causal past), which is
    all the decoder has.
    """
    enc = RangeEncoder()
    for i, s in enumerate(symbols):
        prob_fn(i, symbols).encode(enc, int(s))
    return enc.finish()


def range_decode(
    data: bytes,
    prob_fn: Callable[[int, Sequence[int]], SymbolModel],
    count: int,
) -> list[int]:
    dec = RangeDecoder(data)
    out: list[int] = []
    for i in range(count):
        out.append(prob_fn(i, out).decode(dec))
    dec.check_consumed()
    return out
