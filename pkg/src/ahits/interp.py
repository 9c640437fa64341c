"""Piecewise-linear interpolation of recorded states onto the unit time grid."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def linear_interpolate(node_offsets, node_states, query_offsets) -> np.ndarray:
    """Interpolate states recorded at ``node_offsets`` (unit steps) at ``query_offsets``.

    ``node_states`` is (K, n) or (B, K, n), with time on the second-to-last
    axis. Queries exactly at a node return that node's state bit-for-bit.
    """
    o = np.asarray(node_offsets, dtype=np.float64)
    s = np.asarray(node_states, dtype=np.float64)
    q = np.asarray(query_offsets, dtype=np.float64)
    if o.ndim != 1 or o.size < 1 or s.shape[-2] != o.size:
        raise InvalidArgumentError("node_offsets must be 1-D and match the time axis of node_states")
    if o.size > 1 and np.any(np.diff(o) <= 0):
        raise InvalidArgumentError("node offsets must be strictly increasing")
    if q.size and (q.min() < o[0] or q.max() > o[-1]):
        raise InvalidArgumentError(f"query outside [{o[0]}, {o[-1]}]; extrapolation is not supported")
    if o.size == 1:
        return np.repeat(s[..., :1, :], q.size, axis=-2)
    idx = np.clip(np.searchsorted(o, q, side="right") - 1, 0, o.size - 2)
    w = ((q - o[idx]) / (o[idx + 1] - o[idx]))[:, None]
    left = s[..., idx, :]
    right = s[..., idx + 1, :]
    return (1.0 - w) * left + w * right


def to_unit_grid(node_offsets, node_states) -> np.ndarray:
    """Fill every integer offset from the first to the last node."""
    o = np.asarray(node_offsets)
    return linear_interpolate(o, node_states, np.arange(int(o[0]), int(o[-1]) + 1))
