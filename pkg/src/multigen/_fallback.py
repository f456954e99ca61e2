"""Pure-NumPy implementations of the counter-based random kernels.

Same algorithm and constants as ``_core.pyx``. The integer hashing is
bit-identical between the two; normal variates agree to a few ulp because
the transcendental functions come from different libraries.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM_MULT = np.uint64(0xD1B54A32D192ED03)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
TWO_PI = 6.283185307179586
INV_2_53 = 1.0 / 9007199254740992.0


def _mix(x):
    x = x ^ (x >> np.uint64(30))
    x = x * M1
    x = x ^ (x >> np.uint64(27))
    x = x * M2
    return x ^ (x >> np.uint64(31))


def seed_key(seed):
    with np.errstate(over="ignore"):
        return int(_mix(np.array([seed], dtype=np.uint64) + GOLDEN)[0])


def raw_bits(key, streams, counter):
    """64 random bits for each stream at ``counter``."""
    streams = np.asarray(streams, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) ^ (streams * STREAM_MULT))
        return _mix(h + np.uint64(counter + 1) * GOLDEN)


def normals(key, streams, slot):
    """One standard normal per stream for draw index ``slot`` (Box-Muller, cosine branch)."""
    b0 = raw_bits(key, streams, 2 * slot)
    b1 = raw_bits(key, streams, 2 * slot + 1)
    u1 = ((b0 >> np.uint64(11)).astype(np.float64) + 1.0) * INV_2_53
    u2 = (b1 >> np.uint64(11)).astype(np.float64) * INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)


def mixed_normals(key, own, family, slot, shared):
    """Unit-variance draws with correlation ``shared`` among members of one family.

    The family component uses stream ``family`` at ``slot + 1``.
    """
    z = normals(key, own, slot)
    if shared == 0.0:
        return z
    c = normals(key, family, slot + 1)
    return np.sqrt(shared) * c + np.sqrt(1.0 - shared) * z
