"""Shared instance builders for the test suite."""

from __future__ import annotations

import pytest

from entsched.topology import Network, build_manual


def star_net() -> Network:
    """Four-node star: hub 2 joins 0, 1, 3; cap 2, p=q=1; SD 0:1 and 0:3."""
    return build_manual(
        nodes=[(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)],
        links=[(0, 2, 2, 1.0), (1, 2, 2, 1.0), (3, 2, 2, 1.0)],
        sd_pairs=[(0, 1), (0, 3)],
    )


def two_hop_line(c1=1, p1=1.0, c2=1, p2=1.0, q=1.0) -> Network:
    """Path 0-1-2 with SD pair 0:2 and swap node 1."""
    return build_manual(
        nodes=[(0, 1.0), (1, q), (2, 1.0)],
        links=[(0, 1, c1, p1), (1, 2, c2, p2)],
        sd_pairs=[(0, 2)],
    )


def three_hop_line(c=1, p=0.9, q=0.9) -> Network:
    """Path 0-1-2-3 with SD pair 0:3."""
    return build_manual(
        nodes=[(0, q), (1, q), (2, q), (3, q)],
        links=[(0, 1, c, p), (1, 2, c, p), (2, 3, c, p)],
        sd_pairs=[(0, 3)],
    )


@pytest.fixture
def star():
    return star_net()
