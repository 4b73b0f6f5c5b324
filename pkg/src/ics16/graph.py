"""The transcript graph G as a virtual layered graph.

Layer ``l`` holds every bitstring of length at most ``min(l, n0)``; the four
out-edges of a vertex append a bit, delete the last bit, or keep the
transcript.  Nothing is materialized: vertices are ``(transcript, layer)``
values and edges are computed on demand.

For the vectorized decoder every transcript also has a dense index that does
not depend on the layer: ``index(t) = 2**len(t) - 1 + int(t, 2)``, so the
vertices of layer ``l`` are exactly the indices ``[0, 2**(min(l, n0)+1) - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ics16.errors import AppendBeyondComplete, DepthExceeded


class EdgeLabel(IntEnum):
    # order fixes canonical tie-breaking
    ZERO = 0
    ONE = 1
    BACK = 2
    STAY = 3

    @property
    def glyph(self) -> str:
        return "01<."[self]

    @classmethod
    def parse(cls, text: str) -> list["EdgeLabel"]:
        """Parse a compact path like ``".1<."`` (``<`` is back, ``.`` is stay)."""
        table = {"0": cls.ZERO, "1": cls.ONE, "<": cls.BACK, ".": cls.STAY}
        return [table[ch] for ch in text]


def path_str(path: Iterable[EdgeLabel]) -> str:
    return "".join(EdgeLabel(e).glyph for e in path)


class Vertex(NamedTuple):
    transcript: str
    layer: int

    def __str__(self) -> str:
        return f"{self.transcript or '∅'}_{self.layer}"


ROOT = Vertex("", 0)


@dataclass(frozen=True)
class GraphParams:
    n0: int
    depth: int

    def __post_init__(self) -> None:
        if self.n0 < 2 or self.n0 % 2:
            raise ValueError(f"n0 must be even and >= 2, got {self.n0}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")


def apply_edge(v: Vertex, e: EdgeLabel, params: GraphParams) -> Vertex:
    if v.layer >= params.depth:
        raise DepthExceeded(f"{v} is in the last layer (depth {params.depth})")
    t = v.transcript
    if e == EdgeLabel.ZERO or e == EdgeLabel.ONE:
        if len(t) >= params.n0:
            raise AppendBeyondComplete(f"cannot append to complete transcript {t!r}")
        return Vertex(t + str(int(e)), v.layer + 1)
    if e == EdgeLabel.BACK:
        return Vertex(t[:-1], v.layer + 1)
    return Vertex(t, v.layer + 1)


def follow_path(start: Vertex, path: Sequence[EdgeLabel], params: GraphParams) -> Vertex:
    v = start
    for e in path:
        v = apply_edge(v, e, params)
    return v


def path_vertices(start: Vertex, path: Sequence[EdgeLabel], params: GraphParams) -> list[Vertex]:
    """All vertices visited by ``path``, starting vertex included."""
    out = [start]
    for e in path:
        out.append(apply_edge(out[-1], e, params))
    return out


def layer_vertices(layer: int, params: GraphParams) -> set[Vertex]:
    if not 0 <= layer <= params.depth:
        raise ValueError(f"layer {layer} outside [0, {params.depth}]")
    m = min(layer, params.n0)
    out = set()
    for length in range(m + 1):
        for value in range(1 << length):
            t = format(value, f"0{length}b") if length else ""
            out.add(Vertex(t, layer))
    return out


def layer_size(layer: int, n0: int) -> int:
    return (1 << (min(layer, n0) + 1)) - 1


def transcript_index(t: str) -> int:
    return (1 << len(t)) - 1 + (int(t, 2) if t else 0)


def index_transcript(index: int) -> str:
    length = (index + 1).bit_length() - 1
    value = index - ((1 << length) - 1)
    return format(value, f"0{length}b") if length else ""


@lru_cache(maxsize=32)
def child_table(n0: int) -> np.ndarray:
    """``table[i, e]`` is the transcript index reached from index ``i`` by edge ``e``.

    Appending to a complete transcript is not an edge of the capped graph and
    is marked ``-1``.
    """
    size = layer_size(n0, n0)
    idx = np.arange(size, dtype=np.int64)
    table = np.empty((size, 4), dtype=np.int64)
    grow = idx < (1 << n0) - 1
    table[:, EdgeLabel.ZERO] = np.where(grow, 2 * idx + 1, -1)
    table[:, EdgeLabel.ONE] = np.where(grow, 2 * idx + 2, -1)
    table[:, EdgeLabel.BACK] = np.maximum((idx - 1) // 2, 0)
    table[:, EdgeLabel.STAY] = idx
    table.setflags(write=False)
    return table


def valid_edges(v: Vertex, params: GraphParams) -> list[EdgeLabel]:
    if v.layer >= params.depth:
        return []
    if len(v.transcript) >= params.n0:
        return [EdgeLabel.BACK, EdgeLabel.STAY]
    return list(EdgeLabel)
