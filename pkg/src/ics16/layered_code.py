"""Sensitive layered codes on the transcript graph.

A code is a seeded pseudorandom labelling of the edges of G.  Decoding uses an
exact dynamic program: whether a path ``p`` of length ``i`` is within suffix
distance ``< 1 - eps`` of ``w[:i]`` depends on ``p`` only through its running
deficit

    M(p) = max_j [ mismatches(C(p)[j:i], w[j:i]) - (1 - eps) * (i - j) ],

which obeys ``M(p + e) = max(M(p), 0) + (mismatch - (1 - eps))``.  The update
is monotone in ``M``, so per vertex it suffices to keep the smallest deficit
over all incoming paths; the vertex is listed iff that minimum is negative.
Deficits are kept as integers scaled by the denominator of ``eps``.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from ics16._util import Rational, as_fraction, mix64, mix64_array
from ics16.errors import BudgetExceeded, DepthExceeded, LengthMismatch
from ics16.graph import (
    ROOT,
    EdgeLabel,
    GraphParams,
    Vertex,
    apply_edge,
    index_transcript,
    layer_size,
    transcript_index,
    valid_edges,
)

_INF = np.int32(1 << 30)


@dataclass(frozen=True)
class LayeredCode:
    seed: int
    alphabet_size: int
    params: GraphParams

    def __post_init__(self) -> None:
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")

    def label(self, v: Vertex, e: EdgeLabel) -> int:
        h = mix64(mix64(self.seed & ((1 << 64) - 1)) ^ v.layer)
        return mix64(h ^ (4 * transcript_index(v.transcript) + int(e))) % self.alphabet_size

    def layer_labels(self, layer: int) -> np.ndarray:
        """Labels of every (vertex, edge) leaving ``layer``, shape ``(layer_size, 4)``."""
        if not 0 <= layer < self.params.depth:
            raise DepthExceeded(f"layer {layer} has no out-edges (depth {self.params.depth})")
        return _layer_labels(self.seed, self.alphabet_size, self.params.n0, layer)

    def descriptor(self, epsilon: Rational | None = None) -> dict:
        d = {
            "seed": self.seed,
            "alphabet_size": self.alphabet_size,
            "n0": self.params.n0,
            "depth": self.params.depth,
        }
        if epsilon is not None:
            d["epsilon"] = str(as_fraction(epsilon))
        return d

    @classmethod
    def from_descriptor(cls, d: dict) -> "LayeredCode":
        return cls(int(d["seed"]), int(d["alphabet_size"]), GraphParams(int(d["n0"]), int(d["depth"])))

    def to_json(self, epsilon: Rational | None = None) -> str:
        return json.dumps(self.descriptor(epsilon), sort_keys=True)


@lru_cache(maxsize=1024)
def _layer_labels(seed: int, alphabet_size: int, n0: int, layer: int) -> np.ndarray:
    size = layer_size(layer, n0)
    h0 = mix64(mix64(seed & ((1 << 64) - 1)) ^ layer)
    h = mix64_array(np.uint64(h0) ^ np.arange(4 * size, dtype=np.uint64))
    if alphabet_size & (alphabet_size - 1) == 0:
        h &= np.uint64(alphabet_size - 1)
    else:
        h %= np.uint64(alphabet_size)
    out = h.astype(np.int32).reshape(size, 4)
    out.setflags(write=False)
    return out


def spawn_code(seed: int, alphabet_size: int, params: GraphParams) -> LayeredCode:
    return LayeredCode(seed, alphabet_size, params)


def encode(code: LayeredCode, start: Vertex, path: Sequence[EdgeLabel]) -> list[int]:
    if start.layer + len(path) > code.params.depth:
        raise DepthExceeded(f"path of length {len(path)} from {start} leaves the graph")
    out = []
    v = start
    for e in path:
        out.append(code.label(v, e))
        v = apply_edge(v, e, code.params)
    return out


def suffix_distance(x: Sequence, y: Sequence) -> Fraction:
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    n = len(x)
    if n == 0:
        raise LengthMismatch("suffix distance needs non-empty strings")
    best = Fraction(0)
    mism = 0
    for i in range(n - 1, -1, -1):
        mism += x[i] != y[i]
        best = max(best, Fraction(mism, n - i))
    return best


@dataclass(frozen=True)
class DecodeResult:
    outcome: str  # "unique" | "ambiguous" | "empty"
    vertex: Vertex | None = None

    @classmethod
    def from_list(cls, listed: set[Vertex] | frozenset[Vertex]) -> "DecodeResult":
        if len(listed) == 1:
            return cls("unique", next(iter(listed)))
        return cls("ambiguous" if listed else "empty")

    @property
    def is_unique(self) -> bool:
        return self.outcome == "unique"


class ListDecoder:
    """Incremental deficit DP for one code and one epsilon.

    Keeps the deficit arrays of the last decoded word so that a word sharing
    a prefix with it only pays for the new layers; the protocol decodes
    ``P || z`` once per message with ``P`` growing by one pair at a time.
    """

    def __init__(self, code: LayeredCode, epsilon: Rational):
        eps = as_fraction(epsilon)
        if not 0 < eps < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {eps}")
        self.code = code
        self.epsilon = eps
        # deficits scaled by eps.denominator: mismatch adds eps, match subtracts 1 - eps
        self._up = eps.numerator
        self._down = eps.denominator - eps.numerator
        self._word: list[int] = []
        self._layers: list[np.ndarray] = [np.zeros(1, dtype=np.int32)]

    def _sync(self, w: Sequence[int]) -> None:
        if len(w) > self.code.params.depth:
            raise DepthExceeded(f"word of length {len(w)} exceeds depth {self.code.params.depth}")
        common = 0
        for a, b in zip(self._word, w):
            if a != b:
                break
            common += 1
        del self._word[common:]
        del self._layers[common + 1 :]
        for i in range(common, len(w)):
            self._layers.append(self._step(self._layers[-1], i, int(w[i])))
            self._word.append(int(w[i]))

    def _step(self, deficits: np.ndarray, layer: int, symbol: int) -> np.ndarray:
        # Indices are dense (idx(t0) = 2 idx(t) + 1, idx(t1) = 2 idx(t) + 2),
        # so every edge kind is a strided slice of the layer.
        n0 = self.code.params.n0
        labels = self.code.layer_labels(layer)
        size = deficits.shape[0]
        cand = np.where(labels == symbol, np.int32(-self._down), np.int32(self._up))
        cand += np.maximum(deficits, 0)[:, None]
        out = np.full(layer_size(layer + 1, n0), _INF, dtype=np.int32)
        out[:size] = cand[:, EdgeLabel.STAY]
        k = min(size, (1 << n0) - 1)  # transcripts that can still grow
        np.minimum(out[1 : 2 * k + 1 : 2], cand[:k, EdgeLabel.ZERO], out=out[1 : 2 * k + 1 : 2])
        np.minimum(out[2 : 2 * k + 2 : 2], cand[:k, EdgeLabel.ONE], out=out[2 : 2 * k + 2 : 2])
        back = cand[:, EdgeLabel.BACK]
        half = (size - 1) // 2
        np.minimum(out[:half], np.minimum(back[1::2], back[2::2]), out=out[:half])
        out[0] = min(out[0], back[0])
        return out

    def deficits(self, w: Sequence[int], i: int) -> np.ndarray:
        self._sync(w[:i])
        return self._layers[i]

    def list_layer(self, w: Sequence[int], i: int) -> frozenset[Vertex]:
        if not 1 <= i <= len(w):
            raise ValueError(f"layer {i} outside [1, {len(w)}]")
        d = self.deficits(w, i)
        return frozenset(Vertex(index_transcript(int(k)), i) for k in np.flatnonzero(d < 0))

    def all_lists(self, w: Sequence[int]) -> list[frozenset[Vertex]]:
        """``[L_1, ..., L_n]`` for ``n = len(w)`` in one pass."""
        self._sync(w)
        return [
            frozenset(Vertex(index_transcript(int(k)), i) for k in np.flatnonzero(self._layers[i] < 0))
            for i in range(1, len(w) + 1)
        ]

    def decode(self, w: Sequence[int]) -> DecodeResult:
        if not 1 <= len(w) <= self.code.params.depth:
            raise ValueError(f"cannot decode a word of length {len(w)}")
        d = self.deficits(w, len(w))
        hits = np.flatnonzero(d < 0)
        if hits.size == 1:
            return DecodeResult("unique", Vertex(index_transcript(int(hits[0])), len(w)))
        return DecodeResult("ambiguous" if hits.size else "empty")


def list_layer(code: LayeredCode, w: Sequence[int], epsilon: Rational, i: int) -> frozenset[Vertex]:
    return ListDecoder(code, epsilon).list_layer(w, i)


def decode(code: LayeredCode, w: Sequence[int], epsilon: Rational) -> DecodeResult:
    return ListDecoder(code, epsilon).decode(w)


# --- brute-force oracles -------------------------------------------------------


def all_paths(params: GraphParams, length: int, start: Vertex = ROOT) -> Iterator[tuple[EdgeLabel, ...]]:
    """Every path of ``length`` edges from ``start`` that stays inside the capped graph."""
    def rec(v: Vertex, depth_left: int, prefix: tuple[EdgeLabel, ...]):
        if depth_left == 0:
            yield prefix
            return
        for e in valid_edges(v, params):
            yield from rec(apply_edge(v, e, params), depth_left - 1, prefix + (e,))

    yield from rec(start, length, ())


def brute_list_layer(code: LayeredCode, w: Sequence[int], epsilon: Rational, i: int) -> frozenset[Vertex]:
    eps = as_fraction(epsilon)
    out = set()
    for p in all_paths(code.params, i):
        if suffix_distance(encode(code, ROOT, p), w[:i]) < 1 - eps:
            v = ROOT
            for e in p:
                v = apply_edge(v, e, code.params)
            out.add(v)
    return frozenset(out)


def brute_decode(code: LayeredCode, w: Sequence[int], epsilon: Rational) -> DecodeResult:
    return DecodeResult.from_list(brute_list_layer(code, w, epsilon, len(w)))


# --- decoding quality ----------------------------------------------------------


def decode_quality(
    code: LayeredCode, x: Sequence[EdgeLabel], w: Sequence[int], epsilon: Rational
) -> tuple[int, int]:
    """Return ``(|J|, bad)``: agreement count and agreeing indices that fail to decode to ``v(x[:i])``."""
    if len(x) != len(w):
        raise LengthMismatch(f"|x|={len(x)} but |w|={len(w)}")
    cx = encode(code, ROOT, x)
    lists = ListDecoder(code, epsilon).all_lists(w) if w else []
    v = ROOT
    agree = bad = 0
    for i, e in enumerate(x):
        v = apply_edge(v, e, code.params)
        if cx[i] != w[i]:
            continue
        agree += 1
        if lists[i] != {v}:
            bad += 1
    return agree, bad


def random_path(params: GraphParams, length: int, rng: random.Random) -> list[EdgeLabel]:
    """Uniform choice among valid edges at each step."""
    v, out = ROOT, []
    for _ in range(length):
        e = rng.choice(valid_edges(v, params))
        out.append(e)
        v = apply_edge(v, e, params)
    return out


def sample_decode_quality(
    code: LayeredCode, epsilon: Rational, trials: int, seed: int, length: int | None = None
) -> list[tuple[int, int]]:
    """``decode_quality`` on random paths with random agreement patterns.

    Each trial draws an agreement rate uniformly from [0, 1]; positions
    disagree with a uniformly chosen wrong symbol.
    """
    n = code.params.depth if length is None else length
    rng = random.Random(seed)
    q = code.alphabet_size
    out = []
    for _ in range(trials):
        x = random_path(code.params, n, rng)
        rate = rng.random()
        w = [c if rng.random() < rate else (c + rng.randrange(1, q)) % q for c in encode(code, ROOT, x)]
        out.append(decode_quality(code, x, w, epsilon))
    return out


# --- exhaustive sensitivity check ---------------------------------------------


@dataclass
class SensitivityReport:
    epsilon: Fraction
    depth: int
    violations: list[tuple[tuple[int, ...], tuple[tuple[Vertex, EdgeLabel], ...]]] = field(default_factory=list)
    checked_words: int = 0
    represented_words: int = 0
    max_agreement: int = 0
    trees_examined: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "epsilon": str(self.epsilon),
            "depth": self.depth,
            "passed": self.passed,
            "violation_count": len(self.violations),
            "violations": [
                {"word": list(word), "tree": [[str(v), EdgeLabel(e).glyph] for v, e in tree]}
                for word, tree in self.violations[:20]
            ],
            "checked_words": self.checked_words,
            "represented_words": self.represented_words,
            "max_agreement": self.max_agreement,
            "agreement_limit": str((1 + self.epsilon) * self.depth),
            "trees_examined": self.trees_examined,
        }


@dataclass
class _Path:
    edges: tuple[EdgeLabel, ...]
    vertices: tuple[Vertex, ...]  # vertices[k] is reached after k edges
    labels: tuple[int, ...]


def _word_classes(code: LayeredCode, depth: int) -> list[list[int]]:
    """Per layer, the labels in use plus one unused representative.

    Symbols that label no edge of a layer behave identically in every
    agreement and suffix-distance computation, so one of them suffices.
    """
    classes = []
    for layer in range(depth):
        used = set()
        for t_index in range(layer_size(layer, code.params.n0)):
            v = Vertex(index_transcript(t_index), layer)
            for e in valid_edges(v, code.params):
                used.add(code.label(v, e))
        symbols = sorted(used)
        if len(used) < code.alphabet_size:
            symbols.append(next(s for s in range(code.alphabet_size) if s not in used))
        classes.append(symbols)
    return classes


def _deficit(labels: Sequence[int], w: Sequence[int], eps: Fraction) -> Fraction:
    """max_j [mismatches(labels[j:], w[j:]) - (1 - eps)(k - j)] for ``k = len(labels)``."""
    best = None
    mism = 0
    k = len(labels)
    for j in range(k - 1, -1, -1):
        mism += labels[j] != w[j]
        val = mism - (1 - eps) * (k - j)
        best = val if best is None or val > best else best
    return best if best is not None else Fraction(-1)


def prefix_tree(
    paths: dict[Vertex, _Path], w: Sequence[int], eps: Fraction, params: GraphParams, code: LayeredCode
) -> dict[Vertex, _Path]:
    """Rewrite a path selection into a prefix tree by the deficit-greedy merge.

    Repeatedly take the deepest layer where two selected paths meet at a
    vertex through different prefixes, and reroute all of them through the
    prefix of least deficit.  Each step decreases (layer, collision count)
    lexicographically, and suffix-distance membership is preserved.
    """
    paths = dict(paths)
    while True:
        collisions: dict[int, dict[Vertex, set[tuple[EdgeLabel, ...]]]] = {}
        for p in paths.values():
            for k in range(1, len(p.edges) + 1):
                collisions.setdefault(k, {}).setdefault(p.vertices[k], set()).add(p.edges[:k])
        bad = [(k, y) for k, ys in collisions.items() for y, prefixes in ys.items() if len(prefixes) > 1]
        if not bad:
            return paths
        k_max = max(k for k, _ in bad)
        y_max = min((y for k, y in bad if k == k_max), key=lambda y: y.transcript)
        through = [v for v, p in paths.items() if len(p.edges) >= k_max and p.vertices[k_max] == y_max]
        best = min(
            (paths[v] for v in through),
            key=lambda p: (_deficit(p.labels[:k_max], w, eps), [int(e) for e in p.edges[:k_max]]),
        )
        for v in through:
            old = paths[v]
            edges = best.edges[:k_max] + old.edges[k_max:]
            paths[v] = _Path(edges, best.vertices[:k_max] + old.vertices[k_max:], best.labels[:k_max] + old.labels[k_max:])


def _tree_edges(paths: dict[Vertex, _Path]) -> set[tuple[Vertex, EdgeLabel]]:
    edges = set()
    for p in paths.values():
        for k, e in enumerate(p.edges):
            edges.add((p.vertices[k], e))
    return edges


def check_sensitivity_exhaustive(
    code: LayeredCode,
    depth: int,
    epsilon: Rational,
    budget: int = 2_000_000,
) -> SensitivityReport:
    """Exhaustively test the agreement condition on every word of length ``depth``.

    Words are enumerated up to symbol equivalence (see ``_word_classes``).  For
    each word every selection of listed vertices and qualifying paths is
    formed; selections that are not already trees are merged into one by
    ``prefix_tree``.  Any tree whose agreement exceeds ``(1 + eps) * depth``
    is a violation.  ``budget`` caps word classes times path selections.
    """
    eps = as_fraction(epsilon)
    if depth < 1 or depth > code.params.depth:
        raise ValueError(f"depth {depth} outside [1, {code.params.depth}]")
    classes = _word_classes(code, depth)
    n_classes = 1
    for c in classes:
        n_classes *= len(c)
    if n_classes > budget:
        raise BudgetExceeded(f"{n_classes} word classes exceed budget {budget}")

    params = code.params
    all_p: list[_Path] = []
    for length in range(1, depth + 1):
        for edges in all_paths(params, length):
            vs = [ROOT]
            for e in edges:
                vs.append(apply_edge(vs[-1], e, params))
            labels = tuple(code.label(vs[k], e) for k, e in enumerate(edges))
            all_p.append(_Path(edges, tuple(vs), labels))

    limit = (1 + eps) * depth
    report = SensitivityReport(eps, depth, represented_words=code.alphabet_size**depth)
    work = 0
    for word in itertools.product(*classes):
        report.checked_words += 1
        options: dict[Vertex, list[_Path]] = {}
        for p in all_p:
            k = len(p.edges)
            if suffix_distance(p.labels, word[:k]) < 1 - eps:
                options.setdefault(p.vertices[-1], []).append(p)
        listed = sorted(options, key=lambda v: (v.layer, v.transcript))
        n_sel = 1
        for v in listed:
            n_sel *= 1 + len(options[v])
        work += n_sel
        if work > budget:
            raise BudgetExceeded(f"path selections exceed budget {budget}")
        worst = 0
        witness = None
        for choice in itertools.product(*[[None] + options[v] for v in listed]):
            sel = {v: p for v, p in zip(listed, choice) if p is not None}
            if not sel:
                continue
            tree = prefix_tree(sel, word, eps, params, code)
            edges = _tree_edges(tree)
            agr = sum(1 for v, e in edges if code.label(v, e) == word[v.layer])
            report.trees_examined += 1
            if agr > worst:
                worst, witness = agr, edges
        report.max_agreement = max(report.max_agreement, worst)
        if worst > limit:
            ordered = tuple(sorted(witness, key=lambda ve: (ve[0].layer, ve[0].transcript, int(ve[1]))))
            report.violations.append((tuple(word), ordered))
    return report
