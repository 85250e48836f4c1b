"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by the
pair ``(master seed, stream id)``.  Philox is counter-based: the word at a
given counter address is a pure function of the key, so identical keys
reproduce identical draws no matter how work is scheduled across threads.

Stream ids partition into roles so that independent parts of an experiment
(coupled paths, weak-rate reference, bootstrap resampling, ...) can never
collide: bits 48..63 carry the role, bits 40..47 an optional level tag, and
the low 40 bits the sample index.

Standard normals are produced by inverse CDF from exactly one 64-bit word
each: the top 52 bits of the word select the cell midpoint ``(k + 1/2) /
2**52`` of a uniform partition of (0, 1), which keeps the map symmetric
around 1/2 and bounded away from 0 and 1 (ndtri would return +-inf there).
One word per normal means the word for step ``k``, dimension ``i``,
component ``j`` of a sampled path sits at the fixed counter address
``2*(k*d + i) + j``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError

# Stream roles (bits 48..63 of the stream id).
ROLE_SIMULATE = 1
ROLE_STRONG = 2
ROLE_OU_RESIDUAL = 3
ROLE_WEAK_REF = 4
ROLE_WEAK_LEVEL = 5
ROLE_DEMO = 6
ROLE_TV = 7
ROLE_SEMIGROUP = 8
ROLE_BOOTSTRAP = 9
ROLE_INCREMENT_CHECK = 10

_INDEX_BITS = 40
_LEVEL_BITS = 8


def stream_key(role: int, index: int, level: int = 0) -> int:
    """Pack (role, level, index) into a 64-bit stream id.

    Parameters
    ----------
    role : int
        One of the ``ROLE_*`` constants (1..65535).
    index : int
        Sample index within the role, below 2**40.
    level : int, optional
        Level tag (for example log2 of the grid resolution), below 2**8.
    """
    if not 0 <= index < (1 << _INDEX_BITS):
        raise ConfigError(f"stream index {index} outside [0, 2**{_INDEX_BITS})")
    if not 0 <= level < (1 << _LEVEL_BITS):
        raise ConfigError(f"stream level tag {level} outside [0, 256)")
    if not 0 < role < (1 << 16):
        raise ConfigError(f"stream role {role} outside (0, 65536)")
    return (role << (_INDEX_BITS + _LEVEL_BITS)) | (level << _INDEX_BITS) | index


def make_generator(seed: int, stream_id: int) -> np.random.Generator:
    """Philox generator keyed by (seed, stream_id), counter at zero."""
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_words(seed: int, stream_id: int, count: int) -> np.ndarray:
    """Draw `count` standard normals, one 64-bit Philox word per value."""
    gen = make_generator(seed, stream_id)
    u = gen.random(count)
    # Cell midpoints (k + 1/2) / 2**52 are exact in binary64 and symmetric.
    return ndtri((np.floor(u * 2.0**52) + 0.5) * 2.0**-52)
