"""Counter-based Gaussian noise keyed by (seed, path index, step).

Every normal variate is a pure function of ``(seed, path, purpose, index)``:
one Philox4x32-10 block is evaluated at counter
``(index, purpose, path_lo, path_hi)`` under key ``(seed_lo, seed_hi)`` and
turned into two standard normals with the Marsaglia polar method (rejected
blocks retry with an attempt number packed above the purpose bits).
Sub-stream 0 (the non-tilde noise) is the first member of the pair and
sub-stream 1 (the tilde noise) the second; the polar pair is independent.

Because nothing is sequential, a path can be replayed alone, ensembles can
be split into path ranges and evaluated in any order, and the result is
bit-identical.
"""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = [
    "NOISE",
    "INIT",
    "philox4x32",
    "normal_pairs",
    "WienerStream",
    "wiener_increment",
]

# purpose words; keep distinct so noise and initial draws never collide
NOISE = 0
INIT = 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_SHIFT21 = np.uint64(21)
_SHIFT11 = np.uint64(11)
_TWO_POW_M52 = 2.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _SHIFT32
        lo0 = p0 & _MASK
        hi1 = p1 >> _SHIFT32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@numba.njit(cache=True)
def _philox_array(ctr, key):
    out = np.empty(4, dtype=np.uint64)
    a, b, c, d = _philox_block(ctr[0], ctr[1], ctr[2], ctr[3], key[0], key[1])
    out[0] = a
    out[1] = b
    out[2] = c
    out[3] = d
    return out


def philox4x32(counter, key) -> np.ndarray:
    """Raw Philox4x32-10 block for a 4-word counter and 2-word key (uint32 words)."""
    ctr = np.asarray(counter, dtype=np.uint64) & 0xFFFFFFFF
    k = np.asarray(key, dtype=np.uint64) & 0xFFFFFFFF
    if ctr.shape != (4,) or k.shape != (2,):
        raise ValueError("counter needs 4 words and key 2 words")
    return _philox_array(ctr, k).astype(np.uint32)


@numba.njit(cache=True, inline="always")
def _gauss_pair(seed_lo, seed_hi, path, purpose, index):
    c2 = path & _MASK
    c3 = path >> _SHIFT32
    attempt = np.uint64(0)
    # Marsaglia polar method; a rejected block retries at the next attempt word
    while True:
        a, b, c, d = _philox_block(
            index, purpose | (attempt << np.uint64(8)), c2, c3, seed_lo, seed_hi
        )
        v1 = np.int64((a << _SHIFT21) | (b >> _SHIFT11)) * _TWO_POW_M52 - 1.0
        v2 = np.int64((c << _SHIFT21) | (d >> _SHIFT11)) * _TWO_POW_M52 - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            break
        attempt += np.uint64(1)
    f = math.sqrt(-2.0 * math.log(s) / s)
    return v1 * f, v2 * f


@numba.njit(cache=True)
def _first_attempt(seed_lo, seed_hi, paths, purpose, index, v1, v2):
    # first polar candidates for every path; separate contiguous outputs keep
    # this loop vectorized
    for i in range(paths.shape[0]):
        a, b, c, d = _philox_block(index, purpose, paths[i] & _MASK, paths[i] >> _SHIFT32,
                                   seed_lo, seed_hi)
        v1[i] = np.int64((a << _SHIFT21) | (b >> _SHIFT11)) * _TWO_POW_M52 - 1.0
        v2[i] = np.int64((c << _SHIFT21) | (d >> _SHIFT11)) * _TWO_POW_M52 - 1.0


@numba.njit(cache=True, inline="always")
def _polar_finish(seed_lo, seed_hi, path, purpose, index, v1, v2):
    """Normal pair from a first candidate; identical to :func:`_gauss_pair`."""
    s = v1 * v1 + v2 * v2
    if 0.0 < s < 1.0:
        f = math.sqrt(-2.0 * math.log(s) / s)
        return v1 * f, v2 * f
    return _gauss_pair(seed_lo, seed_hi, path, purpose, index)


@numba.njit(cache=True)
def _fill_pairs(seed_lo, seed_hi, paths, purpose, index, out):
    n = paths.shape[0]
    v1 = np.empty(n)
    v2 = np.empty(n)
    _first_attempt(seed_lo, seed_hi, paths, purpose, index, v1, v2)
    for i in range(n):
        out[i, 0], out[i, 1] = _polar_finish(seed_lo, seed_hi, paths[i], purpose, index,
                                             v1[i], v2[i])


def _split_seed(seed: int) -> tuple[np.uint64, np.uint64]:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def normal_pairs(seed: int, paths, index: int, purpose: int = NOISE) -> np.ndarray:
    """Standard normal pairs, shape ``(len(paths), 2)``.

    Column 0 is sub-stream 0 (non-tilde), column 1 sub-stream 1 (tilde).
    """
    if index < 0 or index >= 2**32:
        raise ValueError("counter index out of range")
    lo, hi = _split_seed(seed)
    p = np.atleast_1d(np.asarray(paths, dtype=np.uint64))
    out = np.empty((p.shape[0], 2))
    _fill_pairs(lo, hi, p, np.uint64(purpose), np.uint64(index), out)
    return out


class WienerStream:
    """Stateful view over the counter-based noise for one or many paths.

    Parameters
    ----------
    seed : int
        Base seed (64-bit).
    paths : int or array of int
        Path indices; the stream yields one noise pair per path and step.
    start : int
        Counter index of the next draw.
    """

    def __init__(self, seed: int, paths=0, start: int = 0):
        self.seed = int(seed)
        self.scalar = np.ndim(paths) == 0
        self.paths = np.atleast_1d(np.asarray(paths, dtype=np.uint64))
        self.counter = int(start)
        _split_seed(self.seed)

    def __repr__(self):
        return f"WienerStream(seed={self.seed}, n_paths={self.paths.size}, counter={self.counter})"

    def standard_normals(self, substeps: int = 1) -> np.ndarray:
        """Sum of ``substeps`` consecutive pairs scaled to unit variance."""
        z = normal_pairs(self.seed, self.paths, self.counter)
        for k in range(1, substeps):
            z += normal_pairs(self.seed, self.paths, self.counter + k)
        self.counter += substeps
        if substeps > 1:
            z /= math.sqrt(substeps)
        return z[0] if self.scalar else z


def wiener_increment(stream: WienerStream, dt: float, substeps: int = 1):
    """Draw ``(dW, dW_tilde)`` with ``E[dW] = 0`` and ``E[dW dW] = dt``.

    With ``substeps = r`` the increment is the sum of ``r`` finer increments
    of size ``dt / r`` from the same counter sequence, which couples runs at
    different step sizes to one Brownian path.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = stream.standard_normals(substeps) * math.sqrt(dt)
    return z[..., 0], z[..., 1]
