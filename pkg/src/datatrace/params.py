"""Flat 64-bit parameter vectors with a named block layout."""

from __future__ import annotations

import numpy as np


class ParameterVector:
    """All model parameters as one contiguous float64 vector.

    ``layout`` maps block names to ``(offset, shape)``; the offsets must
    partition ``[0, size)`` exactly. Blocks are exposed as reshaped views
    into the flat storage, so in-place edits of a block are visible in
    ``values`` and vice versa.
    """

    def __init__(self, values, layout):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("parameter values must be one-dimensional")
        self.values = values
        self.layout = dict(layout)
        self._check_layout()

    def _check_layout(self):
        spans = sorted(
            (off, off + int(np.prod(shape, dtype=np.int64)))
            for off, shape in self.layout.values()
        )
        cursor = 0
        for start, stop in spans:
            if start != cursor:
                raise ValueError(
                    f"layout gap or overlap at offset {cursor} (block starts at {start})"
                )
            cursor = stop
        if cursor != self.values.size:
            raise ValueError(
                f"layout covers {cursor} entries, vector has {self.values.size}"
            )

    @property
    def size(self):
        return self.values.size

    def block(self, name):
        off, shape = self.layout[name]
        count = int(np.prod(shape, dtype=np.int64))
        return self.values[off : off + count].reshape(shape)

    def copy(self):
        return ParameterVector(self.values.copy(), self.layout)

    def zeros_like(self):
        return ParameterVector(np.zeros_like(self.values), self.layout)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"ParameterVector(size={self.size}, blocks={list(self.layout)})"


def as_flat(params):
    """Accept a ParameterVector or a bare array; return the flat float64 array."""
    if isinstance(params, ParameterVector):
        return params.values
    return np.asarray(params, dtype=np.float64)
