"""Low-rank spatial/channel attention gates.

A structured gate over a [C, H, W] feature block is a sum of T rank-one
terms, each the outer product of a spatial map [H, W] and a channel vector
[C]. The matricized gate (positions by channels) therefore has rank at most
T, which is what makes the representation cheap: T * (H*W + C) numbers stand
in for a full H*W-by-C table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, outer_map_vec


@dataclass(frozen=True)
class AttentionMap:
    """Spatial gate factor, one weight per position.

    Entries produced by the mean-field spatial update are sigmoid outputs and
    lie strictly inside (0, 1); the type itself only pins the layout.
    """

    values: Tensor

    def __post_init__(self):
        if len(self.values.dims) != 2:
            raise ShapeError("attention map must be [H, W]", self.values.dims)


@dataclass(frozen=True)
class AttentionVector:
    """Channel gate factor; mean-field channel updates put it on the simplex."""

    values: Tensor

    def __post_init__(self):
        if len(self.values.dims) != 1:
            raise ShapeError("attention vector must be [C]", self.values.dims)


@dataclass(frozen=True)
class StructuredAttention:
    """Rank-T gate: T spatial maps paired with T channel vectors."""

    rank: int
    maps: tuple[AttentionMap, ...] = field(default_factory=tuple)
    vectors: tuple[AttentionVector, ...] = field(default_factory=tuple)

    def __post_init__(self):
        rank = int(self.rank)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "vectors", tuple(self.vectors))
        if rank < 0:
            raise ShapeError(f"rank must be >= 0, got {rank}")
        if len(self.maps) != rank or len(self.vectors) != rank:
            raise ShapeError(
                f"rank {rank} needs {rank} maps and vectors, got "
                f"{len(self.maps)} and {len(self.vectors)}"
            )
        if rank:
            hw = self.maps[0].values.dims
            c = self.vectors[0].values.dims
            for m in self.maps:
                if m.values.dims != hw:
                    raise ShapeError("maps disagree on extent", hw, m.values.dims)
            for v in self.vectors:
                if v.values.dims != c:
                    raise ShapeError("vectors disagree on extent", c, v.values.dims)

    @property
    def spatial_dims(self) -> tuple[int, int]:
        if not self.rank:
            raise ShapeError("rank-0 attention has no extent")
        return self.maps[0].values.dims

    @property
    def channels(self) -> int:
        if not self.rank:
            raise ShapeError("rank-0 attention has no extent")
        return self.vectors[0].values.dims[0]


def assemble(att: StructuredAttention) -> Tensor:
    """Materialize the gate tensor [C, H, W] as the sum of rank-one terms.

    Rank 0 has nothing to materialize; callers wanting "no attention" should
    take the ungated path instead of assembling an empty gate.
    """
    if att.rank == 0:
        raise ShapeError("cannot assemble a rank-0 gate; use the ungated path")
    acc = outer_map_vec(att.maps[0].values, att.vectors[0].values).data.copy()
    for t in range(1, att.rank):
        acc += outer_map_vec(att.maps[t].values, att.vectors[t].values).data
    return Tensor(acc)


def apply_gate(message: Tensor, att: StructuredAttention) -> Tensor:
    """Elementwise product of a [C, H, W] message with the assembled gate."""
    if len(message.dims) != 3:
        raise ShapeError("message must be [C, H, W]", message.dims)
    gate = assemble(att)
    if gate.dims != message.dims:
        raise ShapeError("gate extent does not match message", gate.dims, message.dims)
    return Tensor(message.data * gate.data)


def from_arrays(maps, vectors) -> StructuredAttention:
    """Build a StructuredAttention from plain arrays (maps [H,W], vectors [C])."""
    ms = tuple(AttentionMap(m if isinstance(m, Tensor) else Tensor(np.asarray(m))) for m in maps)
    vs = tuple(
        AttentionVector(v if isinstance(v, Tensor) else Tensor(np.asarray(v))) for v in vectors
    )
    return StructuredAttention(rank=len(ms), maps=ms, vectors=vs)
