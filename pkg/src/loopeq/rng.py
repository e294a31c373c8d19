"""Counter-based deterministic random streams.

Every random decision in the package is drawn from a Philox stream keyed
by (master seed, replica id, time step).  Philox is counter-based, so the
same key always reproduces the same uniforms regardless of how many other
streams were consumed; replicas can run in parallel in any order and still
produce byte-identical output.
"""

from __future__ import annotations

import numpy as np


def stream(master_seed: int, replica: int = 0, step: int = 0) -> np.random.Generator:
    """Independent generator for one (replica, step) cell of the run."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(replica), int(step)))
    return np.random.Generator(np.random.Philox(ss))


def uniforms(master_seed: int, replica: int, step: int, count: int) -> np.ndarray:
    """The canonical uniform block for step-level decisions: index i of the
    block is the draw for particle i."""
    return stream(master_seed, replica, step).random(count)
