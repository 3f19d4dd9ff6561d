"""Reproducible per-trajectory random streams.

Every trajectory owns an independent Philox (counter-based) generator keyed
by ``SeedSequence(master_seed, spawn_key=(stream_id, index))``. A stream
depends only on those three integers, so results do not depend on how the
ensemble is split across workers or chunks.

Draw order within a stream is fixed: the initial-state sampler consumes
its uniforms first, then the Wiener increments are drawn as one
``standard_normal((n_steps, 3))`` block (numpy's ziggurat) scaled by
``sqrt(dt)``. Changing this order changes every result.
"""

from __future__ import annotations

import numpy as np

#: stream ids used by the protocol runner (independent noise per protocol)
STREAM_IDS = {"M": 0, "Mbar": 1, "custom": 2, "validate": 3}


def trajectory_stream(master_seed: int, index: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for trajectory ``index`` of stream ``stream_id``."""
    if master_seed < 0 or index < 0 or stream_id < 0:
        raise ValueError("seed, index and stream id must be non-negative")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream_id), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def wiener_increments(stream: np.random.Generator, n_steps: int, dt: float) -> np.ndarray:
    """``(n_steps, 3)`` block of independent N(0, dt) increments."""
    return stream.standard_normal((n_steps, 3)) * np.sqrt(dt)
