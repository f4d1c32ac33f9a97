"""
What a single bit flip does to a Q15.16 weight
==============================================

Parameters are stored as 32-bit two's-complement words with 16 fractional
bits. A flip in a low bit is a rounding-level nudge; a flip in the top bits
turns a small weight into a value in the tens of thousands.
"""
import numpy as np

from rrt import fixedpoint as fx

w = 0.8125
word = fx.encode_q15_16(w)
print(f"{w} is stored as 0x{word:08X}")

# Walk through every bit position and decode the corrupted word.
for bit in (0, 8, 15, 16, 20, 24, 28, 30, 31):
    corrupted = fx.decode_q15_16(fx.flip_bit(word, bit))
    print(f"bit {bit:2d}: {w} -> {corrupted:.6g}")

# The magnitude of the error doubles with each bit, so the top few bits
# dominate everything downstream. That is why hardening focuses on
# stopping large activations rather than on small perturbations.
errors = np.array([abs(fx.decode_q15_16(fx.flip_bit(word, b)) - w) for b in range(32)])
print("bits whose flip moves the weight by more than 1.0:", np.flatnonzero(errors > 1.0).tolist())

# Flipping the sign bit of 1.0 lands exactly on -32767.
print("sign flip of 1.0:", fx.decode_q15_16(fx.flip_bit(fx.encode_q15_16(1.0), 31)))
