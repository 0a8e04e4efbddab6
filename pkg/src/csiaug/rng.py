"""Deterministic random substreams.

Every random draw in the package comes from a generator keyed by
``(seed, stream, index)``, so per-sample results do not depend on how work
is scheduled across threads.
"""

from __future__ import annotations

import numpy as np

# stream tags; fixed forever, changing one changes every seeded output
SYNTH_SAMPLE = 1
NONIDEAL = 2
AUG_PHASE = 11
AUG_AMPLITUDE = 12
AUG_NOISE = 13
SPLIT = 21
SUBSAMPLE = 22
INIT = 31
SHUFFLE = 32
SCATTER = 41

_MASK = (1 << 64) - 1


def substream(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Independent generator for one ``(seed, stream, index)`` key."""
    ss = np.random.SeedSequence([int(seed) & _MASK, int(stream), int(index)])
    return np.random.Generator(np.random.PCG64(ss))
