"""Q15.16 fixed-point storage codec.

A parameter is stored as a 32-bit two's-complement word: bit 31 is the sign,
bits 30..16 the integer part and bits 15..0 the fraction. The functions accept
Python scalars or numpy arrays; arrays are processed element-wise and words
come back as ``np.uint32``.
"""
import numpy as np

from .errors import InvalidValueError

FRAC_BITS = 16
SCALE = 1 << FRAC_BITS
WORD_BITS = 32
Q_MIN = -(1 << 31)
Q_MAX = (1 << 31) - 1
MIN_VALUE = Q_MIN / SCALE
MAX_VALUE = Q_MAX / SCALE
RESOLUTION = 1.0 / SCALE


def encode_q15_16(x):
    """Round ``x`` to the nearest Q15.16 word (ties to even), saturating.

    >>> hex(encode_q15_16(1.0))
    '0x10000'
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError("cannot encode non-finite value")
    # np.rint rounds half to even; clip before the integer cast so huge inputs saturate
    q = np.clip(np.rint(arr * SCALE), Q_MIN, Q_MAX).astype(np.int64)
    words = (q & 0xFFFFFFFF).astype(np.uint32)
    if words.ndim == 0:
        return int(words)
    return words


def decode_q15_16(c):
    """Exact real value of a Q15.16 word (or array of words)."""
    words = np.asarray(c, dtype=np.uint32)
    value = words.view(np.int32).astype(np.float64) / SCALE
    if value.ndim == 0:
        return float(value)
    return value


def flip_bit(c, i):
    """Toggle bit ``i`` (0 = LSB, 31 = sign) of a 32-bit word.

    ``c`` and ``i`` may be arrays; they broadcast against each other.
    """
    if np.ndim(i):
        i = np.asarray(i)
        if i.size and (i.min() < 0 or i.max() >= WORD_BITS):
            raise IndexError("bit indices must lie in 0..31")
        return np.asarray(c).astype(np.uint32) ^ (np.uint32(1) << i.astype(np.uint32))
    if not 0 <= i < WORD_BITS:
        raise IndexError(f"bit index {i} outside 0..31")
    if isinstance(c, np.ndarray):
        return c.astype(np.uint32) ^ np.uint32(1 << i)
    return (int(c) ^ (1 << i)) & 0xFFFFFFFF


def quantize(x):
    """decode(encode(x)): the value a parameter takes once stored in Q15.16."""
    return decode_q15_16(encode_q15_16(x))
