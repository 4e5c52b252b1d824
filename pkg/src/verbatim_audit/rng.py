"""Counter-based random streams.

Every random quantity in the pipeline (denoising-score noise, simulated
corpus content, per-caption seed derivation) comes from one documented
scheme so that scores are reproducible bit-for-bit across runs and across
implementations:

  value(seed, i) = mix64((seed + (i + 1) * GAMMA) mod 2^64)

where ``mix64`` is the SplitMix64 finalizer and ``GAMMA`` the SplitMix64
increment.  Uniform doubles take the top 53 bits: ``u = (v >> 11) * 2^-53``
(range [0, 1)).  Gaussians are produced pairwise by the Box-Muller
transform on consecutive counter values:

  u1 = unit(value(seed, 2i)),  u2 = unit(value(seed, 2i + 1))
  r  = sqrt(-2 * ln(1 - u1))
  z[2i]   = r * cos(2 * pi * u2)
  z[2i+1] = r * sin(2 * pi * u2)

Streams are pure functions of (seed, index); there is no hidden state.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
GAMMA = 0x9E3779B97F4A7C15

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64_scalar(x: int) -> int:
    """SplitMix64 finalizer on a plain Python integer (mod 2^64)."""
    z = x & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer over a uint64 array (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def raw_values(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Counter values ``value(seed, offset) .. value(seed, offset + n - 1)`` as uint64."""
    counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = counters * np.uint64(GAMMA) + np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        return _mix64(state)


def uniforms(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """n doubles in [0, 1) from the counter stream."""
    return (raw_values(seed, n, offset) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normals(seed: int, n: int) -> np.ndarray:
    """n standard-normal doubles via Box-Muller on the counter stream."""
    pairs = (n + 1) // 2
    u1 = uniforms(seed, pairs * 2)[0::2]
    u2 = uniforms(seed, pairs * 2)[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    out = np.empty(pairs * 2, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def derive_seed(*parts: int) -> int:
    """Fold integer components into one 64-bit seed.

    Position-dependent: derive_seed(a, b) != derive_seed(b, a) in general.
    Used to give every (run, stage, caption, repeat) its own disjoint stream.
    """
    acc = GAMMA
    for i, part in enumerate(parts):
        acc = mix64_scalar(acc ^ mix64_scalar((part + (i + 1) * GAMMA) & 0xFFFFFFFFFFFFFFFF))
    return acc


# Stage tags for derive_seed; fixed constants so run layouts never collide.
TAG_DCS_NOISE = 0x01
TAG_ECS_SEED = 0x02
TAG_GT_SEED = 0x03
TAG_POSTFILTER_SEED = 0x04
TAG_SIM_CONTENT = 0x05
