"""Arithmetic coder: quantization, round trips, tight length accounting."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqpix.coder import (
    ArithmeticDecoder,
    ArithmeticEncoder,
    CodeBuffer,
    decode_bits,
    encode_bits,
    ideal_bits,
    quantize_prob,
)
from seqpix.exceptions import TruncatedBuffer

GOLDEN = Path(__file__).parent / "data" / "golden_coder.txt"


class TestQuantizeProb:
    def test_half(self):
        assert quantize_prob(0.5) == 32768

    def test_floor_clamp(self):
        assert quantize_prob(1e-9) == 1

    def test_ceiling_clamp(self):
        assert quantize_prob(1.0 - 1e-12) == 65535

    def test_known_value(self):
        # round(0.731059 * 65536) = round(47910.68) = 47911
        assert quantize_prob(0.731059) == 47911


def random_stream(rng, max_len=4096):
    n = int(np.exp(rng.uniform(0, np.log(max_len))))
    bits = rng.integers(0, 2, n).astype(np.uint8)
    probs = rng.uniform(0.001, 0.999, n)
    return bits, probs


class TestRoundTrip:
    def test_empty_stream(self):
        buf = encode_bits([], [])
        assert buf.bit_count <= 64
        assert decode_bits(buf, []).size == 0

    def test_single_bits(self):
        for bit in (0, 1):
            for p in (0.001, 0.5, 0.999):
                buf = encode_bits([bit], [p])
                assert decode_bits(buf, [p]).tolist() == [bit]

    def test_randomized_bulk(self):
        # the cheap randomized sweep; the acceptance suite runs 10^4 of these
        rng = np.random.default_rng(7)
        for _ in range(300):
            bits, probs = random_stream(rng, max_len=2048)
            buf = encode_bits(bits, probs)
            assert np.array_equal(decode_bits(buf, probs), bits)

    def test_extreme_probabilities(self):
        rng = np.random.default_rng(8)
        bits = rng.integers(0, 2, 512).astype(np.uint8)
        probs = np.where(rng.random(512) < 0.5, 1e-9, 1 - 1e-9)
        buf = encode_bits(bits, probs)
        assert np.array_equal(decode_bits(buf, probs), bits)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.001, 0.999)), max_size=600))
    def test_property_round_trip(self, pairs):
        bits = [b for b, _ in pairs]
        probs = [p for _, p in pairs]
        buf = encode_bits(bits, probs)
        assert decode_bits(buf, probs).tolist() == bits


class TestLengthAccounting:
    def test_overhead_window_per_stream(self):
        # payload is never below the quantized ideal and within 64 bits above
        rng = np.random.default_rng(11)
        for _ in range(300):
            bits, probs = random_stream(rng, max_len=4096)
            buf = encode_bits(bits, probs)
            ideal = ideal_bits(bits, probs, quantized=True)
            assert 0.0 <= buf.bit_count - ideal <= 64.0

    def test_uniform_case(self):
        bits = np.ones(8, dtype=np.uint8)
        buf = encode_bits(bits, np.full(8, 0.5))
        assert 8 <= buf.bit_count <= 8 + 64

    def test_skewed_kilostream(self):
        # 1000 one-bits at p=0.9: quantized ideal 152.01 bits
        buf = encode_bits(np.ones(1000, dtype=np.uint8), np.full(1000, 0.9))
        assert 152 <= buf.bit_count <= 152 + 64 + 2

    def test_adversarial_middle_straddle(self):
        # alternating half-splits force long pending-bit runs; the
        # termination must still account for them
        bits = np.tile([0, 1], 500).astype(np.uint8)
        probs = np.full(1000, 0.5)
        buf = encode_bits(bits, probs)
        ideal = ideal_bits(bits, probs, quantized=True)
        assert 0.0 <= buf.bit_count - ideal <= 64.0

    def test_payload_minimally_padded(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            bits, probs = random_stream(rng, max_len=256)
            buf = encode_bits(bits, probs)
            assert buf.bit_count <= 8 * len(buf.payload) < buf.bit_count + 8


class TestStreamingInterface:
    def test_interleaved_adaptive_decode(self):
        # the probability of bit k+1 may depend on the decoded bit k
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 200).astype(np.uint8)

        def prob_for(history):
            ones = int(np.sum(history[-8:])) if history else 0
            return (ones + 1) / 10.0

        enc = ArithmeticEncoder()
        history = []
        for b in bits:
            enc.encode_bit(int(b), quantize_prob(prob_for(history)))
            history.append(int(b))
        buf = enc.finish()

        dec = ArithmeticDecoder(buf)
        out = []
        for _ in range(len(bits)):
            out.append(dec.decode_bit(quantize_prob(prob_for(out))))
        assert out == bits.tolist()

    def test_finish_twice_rejected(self):
        enc = ArithmeticEncoder()
        enc.finish()
        with pytest.raises(RuntimeError):
            enc.finish()

    def test_truncated_payload_detected(self):
        bits = np.ones(64, dtype=np.uint8)
        probs = np.full(64, 0.2)
        buf = encode_bits(bits, probs)
        cut = CodeBuffer(buf.payload[:-1], buf.bit_count)
        with pytest.raises(TruncatedBuffer):
            ArithmeticDecoder(cut)

    def test_determinism(self):
        rng = np.random.default_rng(5)
        bits, probs = random_stream(rng)
        assert encode_bits(bits, probs).payload == encode_bits(bits, probs).payload


class TestGoldenVectors:
    """Frozen payloads guard the exact bit-level behavior of the coder."""

    def _load(self):
        vectors = []
        for line in GOLDEN.read_text().splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            probs_hex, bits_hex, payload_hex = line.split()
            if probs_hex == "-":
                probs_hex = ""
            qs = [int(probs_hex[i : i + 4], 16) for i in range(0, len(probs_hex), 4)]
            n = len(qs)
            raw = bytes.fromhex(bits_hex) if bits_hex != "-" else b""
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n]
            payload = bytes.fromhex(payload_hex)
            vectors.append((qs, bits, payload))
        return vectors

    def test_payloads_match(self):
        vectors = self._load()
        assert len(vectors) >= 8
        for qs, bits, payload in vectors:
            enc = ArithmeticEncoder()
            for b, q in zip(bits.tolist(), qs):
                enc.encode_bit(b, q)
            assert enc.finish().payload == payload

    def test_payloads_decode(self):
        for qs, bits, payload in self._load():
            buf = CodeBuffer(payload, len(payload) * 8)
            dec = ArithmeticDecoder(buf)
            out = [dec.decode_bit(q) for q in qs]
            assert out == bits.tolist()
