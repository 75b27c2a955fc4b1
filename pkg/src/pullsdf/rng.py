"""Deterministic random streams.

All randomness in the package flows through counter-based Philox streams
keyed by (seed, purpose, index...). Independent substreams make sampling
order-independent: drawing for point j never consumes state needed by
point j+1, so serial and parallel generation agree.

Gaussians are produced with the Box-Muller transform on Philox uniforms
rather than the generator's native method, keeping the byte-for-byte
output stable across numpy versions.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# fixed purpose tags so unrelated streams never collide
QUERY_OFFSETS = 1
BATCH_PICK = 2
NET_INIT = 3
SPACE_SAMPLE = 4
SURFACE_SAMPLE = 5
CLOUD_SUBSAMPLE = 6
DEMO_SHAPE = 7


def _splitmix(h, v):
    # one splitmix64 absorption step; pure integer ops, platform independent
    h = (h + (v & _MASK64)) & _MASK64
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & _MASK64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & _MASK64
    h ^= h >> 31
    return h


def stream(seed, *path):
    """Philox generator for substream `path` under `seed`."""
    folded = 0x9E3779B97F4A7C15
    for part in path:
        folded = _splitmix(folded, int(part))
    key = np.array([int(seed) & _MASK64, folded], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal(gen, shape, sigma=1.0):
    """Standard-normal draws of `shape` via Box-Muller, scaled by sigma."""
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    u1 = gen.random(m)
    u2 = gen.random(m)
    # 1-u1 lies in (0, 1], so the log is finite
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * np.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return sigma * z.reshape(shape)
