"""Binary arithmetic coder driven by externally supplied bit probabilities.

Integer-only 32-bit range coder with 16-bit probability precision. The
caller supplies, for every bit, the probability that the bit is one; all
adaptivity therefore lives in the probability models, never in here. The
decoder consumes probabilities one at a time, so a model may condition the
probability of bit k+1 on the decoded value of bit k.

Conventions (fixed, required for cross-implementation compatibility):
  * probabilities quantized by :func:`quantize_prob` to q in [1, 65535],
    identically on the encode and decode side;
  * the split point is ``low + floor(range * (65536 - q) / 65536)``, the
    zero branch taking the low interval;
  * termination materializes pending middle-straddle bits and two
    disambiguation bits, which guarantees the payload is never shorter
    than the ideal code length under the quantized probabilities.

The per-stream overhead relative to the quantized ideal length is at most
``2 + ~2e-4 * n`` bits for an n-bit stream (well under the 64-bit bound the
tests enforce); a missing-byte payload is detected up front.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import TruncatedBuffer

PROB_BITS = 16
PROB_SCALE = 1 << PROB_BITS

_STATE_BITS = 32
_FULL = 1 << _STATE_BITS
_MASK = _FULL - 1
_HALF = _FULL >> 1
_QUARTER = _FULL >> 2


def quantize_prob(p: float) -> int:
    """Map a probability of one to the coder's integer scale [1, 65535]."""
    q = int(round(p * PROB_SCALE))
    return min(max(q, 1), PROB_SCALE - 1)


@dataclass(frozen=True)
class CodeBuffer:
    """Encoded payload plus the exact number of meaningful bits.

    Encoder output always satisfies ``bit_count <= 8*len(payload) <
    bit_count + 8``; a payload too short for its bit count is reported by
    the decoder as :class:`TruncatedBuffer`.
    """

    payload: bytes
    bit_count: int


class _BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nfill = 0
        self.bit_count = 0

    def write(self, bit: int):
        self._acc = (self._acc << 1) | bit
        self._nfill += 1
        self.bit_count += 1
        if self._nfill == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._nfill = 0

    def getvalue(self) -> CodeBuffer:
        payload = bytes(self._bytes)
        if self._nfill:
            payload += bytes((self._acc << (8 - self._nfill),))
        return CodeBuffer(payload, self.bit_count)


class _BitReader:
    """MSB-first bit reader; positions past the end read as zero."""

    def __init__(self, payload: bytes):
        self._payload = payload
        self._pos = 0

    def read(self) -> int:
        i, r = divmod(self._pos, 8)
        self._pos += 1
        if i >= len(self._payload):
            return 0
        return (self._payload[i] >> (7 - r)) & 1


class ArithmeticEncoder:
    """Streaming encoder: feed (bit, quantized p_one) pairs, then finish."""

    def __init__(self):
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self._out = _BitWriter()
        self._finished = False

    def encode_bit(self, bit: int, q_one: int):
        span = self._high - self._low + 1
        split = self._low + (span * (PROB_SCALE - q_one) >> PROB_BITS)
        if bit:
            self._low = split
        else:
            self._high = split - 1
        self._renormalize()

    def _renormalize(self):
        low, high = self._low, self._high
        while (low ^ high) & _HALF == 0:
            bit = low >> (_STATE_BITS - 1)
            self._emit(bit)
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        while low & ~high & _QUARTER:
            self._pending += 1
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        self._low, self._high = low, high

    def _emit(self, bit: int):
        self._out.write(bit)
        inv = bit ^ 1
        for _ in range(self._pending):
            self._out.write(inv)
        self._pending = 0

    def finish(self) -> CodeBuffer:
        """Flush termination bits and return the sealed buffer.

        The final interval straddles the half point, so the value
        0.b1..bs 1 0 0... (written bits, then one, then zeros) always lies
        inside it. Pending straddle bits are materialized rather than
        dropped to keep the payload length an honest upper bound on the
        ideal code length.
        """
        if self._finished:
            raise RuntimeError("finish() called twice")
        self._finished = True
        self._emit(1)
        self._out.write(0)
        return self._out.getvalue()


class ArithmeticDecoder:
    """Streaming decoder: ask for one bit at a time, supplying its q_one.

    Probabilities may depend on previously decoded bits, which is what the
    adaptive models need.
    """

    def __init__(self, buffer: CodeBuffer):
        need = (buffer.bit_count + 7) // 8
        if len(buffer.payload) < need:
            raise TruncatedBuffer(
                f"payload holds {len(buffer.payload)} bytes, bit_count {buffer.bit_count} needs {need}"
            )
        self._in = _BitReader(buffer.payload)
        self._low = 0
        self._high = _MASK
        code = 0
        for _ in range(_STATE_BITS):
            code = (code << 1) | self._in.read()
        self._code = code

    def decode_bit(self, q_one: int) -> int:
        span = self._high - self._low + 1
        split = self._low + (span * (PROB_SCALE - q_one) >> PROB_BITS)
        if self._code >= split:
            bit = 1
            self._low = split
        else:
            bit = 0
            self._high = split - 1
        self._renormalize()
        return bit

    def _renormalize(self):
        low, high, code = self._low, self._high, self._code
        while (low ^ high) & _HALF == 0:
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
            code = ((code << 1) & _MASK) | self._in.read()
        while low & ~high & _QUARTER:
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
            code = (code & _HALF) | ((code << 1) & (_MASK >> 1)) | self._in.read()
        self._low, self._high, self._code = low, high, code


def encode_bits(bits, probs_one) -> CodeBuffer:
    """Encode a whole stream of bits under per-bit probabilities of one."""
    bits = np.asarray(bits, dtype=np.uint8)
    qs = [quantize_prob(p) for p in np.asarray(probs_one, dtype=np.float64)]
    enc = ArithmeticEncoder()
    for bit, q in zip(bits.tolist(), qs):
        enc.encode_bit(bit, q)
    return enc.finish()


def decode_bits(buffer: CodeBuffer, probs_one) -> np.ndarray:
    """Inverse of :func:`encode_bits` given the same probability sequence."""
    dec = ArithmeticDecoder(buffer)
    out = np.empty(len(probs_one), dtype=np.uint8)
    for i, p in enumerate(np.asarray(probs_one, dtype=np.float64)):
        out[i] = dec.decode_bit(quantize_prob(p))
    return out


def ideal_bits(bits, probs_one, *, quantized=True) -> float:
    """Information content of a stream: sum of -log2 P(bit).

    With ``quantized=True`` the probabilities are first pushed through
    :func:`quantize_prob`, giving the quantity the payload length is
    guaranteed to dominate.
    """
    bits = np.asarray(bits, dtype=np.float64)
    p = np.asarray(probs_one, dtype=np.float64)
    if quantized:
        q = np.clip(np.rint(p * PROB_SCALE), 1, PROB_SCALE - 1)
        p = q / PROB_SCALE
    return float(-np.sum(bits * np.log2(p) + (1.0 - bits) * np.log2(1.0 - p)))
