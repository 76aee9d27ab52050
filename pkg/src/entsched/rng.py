"""Named deterministic random substreams.

Every stochastic component of a run (workload draws, per-slot protocol
phases, topology placement) pulls from its own generator derived from a
master seed plus a string label. Streams are independent of each other
and stable across processes, so adding a consumer never perturbs the
draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_entropy(label: object) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_seed(master: int, *labels: object) -> np.random.SeedSequence:
    """SeedSequence for the substream named by `labels` under `master`."""
    entropy = [int(master) & _MASK64]
    entropy.extend(_label_entropy(lab) for lab in labels)
    return np.random.SeedSequence(entropy)


def substream(master: int, *labels: object) -> np.random.Generator:
    """Generator for the substream named by `labels` under `master`."""
    return np.random.default_rng(child_seed(master, *labels))


def child_int(master: int, *labels: object) -> int:
    """Plain integer seed for the substream named by `labels`."""
    return int(child_seed(master, *labels).generate_state(1, np.uint64)[0])
