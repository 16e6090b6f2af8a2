"""Deterministic named random substreams.

Every random draw in the package flows from a single integer seed through
``substream(seed, *names)``. The stream for a given (seed, names) tuple is
independent of how many other streams exist, so adding videos to a corpus
never perturbs the draws of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *names: str | int) -> np.random.Generator:
    """Return a generator keyed by ``seed`` and a path of names.

    The key is hashed with SHA-256, so streams are stable across platforms
    and numpy versions that keep PCG64 output stable.
    """
    material = ":".join([str(int(seed)), *[str(n) for n in names]]).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))
