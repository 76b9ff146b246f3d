"""Labeled random substreams derived from a single master seed.

Each component of a run (CEX path, noise count, noise impact, ...) draws from
its own Philox stream keyed by ``(seed, label, index)``. Switching a component
off therefore never shifts the draws seen by the others, which is what lets
paired runs share common random numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

CEX_PATH = "cex-path"
DEX_REFERENCE = "dex-reference"
NOISE_COUNT = "noise-count"
NOISE_IMPACT = "noise-impact"
NOISE_PLACEMENT = "noise-placement"
ARB_LANDING = "arb-landing"
BELIEF_MC = "belief-mc"


def substream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return the counter-based generator for ``label`` under ``seed``."""
    tag = zlib.crc32(label.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.Philox(seq))


class RngStreams:
    """Lazily created, memoized substreams for one run."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, label: str) -> np.random.Generator:
        gen = self._streams.get(label)
        if gen is None:
            gen = self._streams[label] = substream(self.seed, label)
        return gen

    def fresh(self, label: str, index: int) -> np.random.Generator:
        """An independent, non-memoized stream, e.g. one per decision point."""
        return substream(self.seed, label, index)
