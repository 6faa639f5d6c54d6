"""Block-partitioned vectors.

A point of the joint strategy space is stored as one flat float64 array
plus a :class:`BlockLayout` describing how it splits into player blocks.
Blocks are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BlockLayout:
    block_dims: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if len(dims) < 1:
            raise ValueError("layout needs at least one block")
        if any(d < 1 for d in dims):
            raise ValueError(f"block dimensions must be positive, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "offsets", tuple(np.concatenate([[0], np.cumsum(dims)]).tolist()))

    @classmethod
    def uniform(cls, n: int, dim: int = 1) -> "BlockLayout":
        return cls((dim,) * n)

    @property
    def n(self) -> int:
        return len(self.block_dims)

    @property
    def total_dim(self) -> int:
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        if not 0 <= i < self.n:
            raise IndexError(f"block index {i} out of range for {self.n} blocks")
        return slice(self.offsets[i], self.offsets[i + 1])


class BlockVector:
    """Flat float64 data with a layout sidecar.

    Instances are treated as values: the update helpers return new objects
    and never mutate ``data`` in place.
    """

    __slots__ = ("layout", "data")

    def __init__(self, layout: BlockLayout, data: Sequence[float] | np.ndarray):
        arr = np.array(data, dtype=np.float64).reshape(-1)
        if arr.size != layout.total_dim:
            raise ValueError(f"data has length {arr.size}, layout expects {layout.total_dim}")
        self.layout = layout
        self.data = arr

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "BlockVector":
        return cls(layout, np.zeros(layout.total_dim))

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[float] | np.ndarray]) -> "BlockVector":
        parts = [np.atleast_1d(np.asarray(b, dtype=np.float64)).reshape(-1) for b in blocks]
        layout = BlockLayout(tuple(p.size for p in parts))
        return cls(layout, np.concatenate(parts))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self) -> int:
        return self.data.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"BlockVector({list(self.layout.block_dims)}, {self.data.tolist()})"

    def block(self, i: int) -> np.ndarray:
        return block_view(self, i)

    def blocks(self) -> list[np.ndarray]:
        return [self.data[self.layout.slice(i)].copy() for i in range(self.layout.n)]

    def copy(self) -> "BlockVector":
        return BlockVector(self.layout, self.data.copy())


def block_view(v: BlockVector, i: int) -> np.ndarray:
    """Return a read-only view of block ``i``."""
    out = v.data[v.layout.slice(i)]
    out = out.view()
    out.flags.writeable = False
    return out


def block_axpy(v: BlockVector, i: int, coeff: float, g) -> BlockVector:
    """Return ``v`` with block ``i`` replaced by ``v_i + coeff * g``."""
    sl = v.layout.slice(i)
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))
    if g.shape != (sl.stop - sl.start,):
        raise ValueError(f"block {i} has dimension {sl.stop - sl.start}, got vector of shape {g.shape}")
    data = v.data.copy()
    data[sl] = data[sl] + coeff * g
    return BlockVector(v.layout, data)


def with_block(v: BlockVector, i: int, value) -> BlockVector:
    """Return ``v`` with block ``i`` overwritten by ``value``."""
    sl = v.layout.slice(i)
    data = v.data.copy()
    data[sl] = value
    return BlockVector(v.layout, data)


def norms(v: BlockVector) -> tuple[float, np.ndarray]:
    """Euclidean norm and the per-block squared norms."""
    blocks = np.array([float(np.dot(b, b)) for b in (v.data[v.layout.slice(i)] for i in range(v.layout.n))])
    return float(np.sqrt(blocks.sum())), blocks
