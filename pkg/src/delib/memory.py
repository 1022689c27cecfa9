"""Chat memory and shared tool memory with embedding retrieval.

One :class:`MemoryStore` backs one criterion conversation. Chunks are
append-only; ids come from a single counter so they increase across both
sequences. Retrieval is exhaustive cosine ranking (stores hold dozens of
chunks, not millions).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal, Protocol, Sequence

import numpy as np

from .errors import DelibError

Scope = Literal["chat", "tool", "both"]

# Scores are rounded before ranking so near-equal floats from different
# summation orders cannot flip a tie.
SCORE_DECIMALS = 9

_WORD_RE = re.compile(r"\w+")


class EmbeddingDimensionError(DelibError):
    pass


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Bag of lowercase words hashed into ``dimension`` buckets, L2-normalized.

    Uses blake2b rather than ``hash()`` so vectors are identical across
    processes and platforms.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in _WORD_RE.findall(text.lower()):
            vec[self.bucket(tok)] += 1.0
        norm = float(np.sqrt(np.dot(vec, vec)))
        if norm > 0:
            vec /= norm
        return vec


_REFERENCE = HashingEmbedder()


def embed_reference(text: str, dimension: int = 256) -> np.ndarray:
    embedder = _REFERENCE if dimension == 256 else HashingEmbedder(dimension)
    return embedder.embed(text)


@dataclass(frozen=True)
class ChatSource:
    speaker: str
    turn_index: int
    kind: str = field(default="chat", init=False)

    @property
    def recency(self) -> int:
        return self.turn_index


@dataclass(frozen=True)
class ToolSource:
    tool_id: str
    call_id: int
    kind: str = field(default="tool", init=False)

    @property
    def recency(self) -> int:
        return self.call_id


@dataclass(frozen=True)
class MemoryChunk:
    id: int
    source: ChatSource | ToolSource
    text: str
    embedding: np.ndarray = field(repr=False, compare=False)

    def to_record(self) -> dict:
        src = self.source
        if isinstance(src, ChatSource):
            source = {"kind": "chat", "speaker": src.speaker, "turn_index": src.turn_index}
        else:
            source = {"kind": "tool", "tool_id": src.tool_id, "call_id": src.call_id}
        return {"id": self.id, "source": source, "text": self.text}


def chunk_text(text: str, size: int = 2000, overlap: int = 200) -> list[str]:
    """Fixed character windows; the last window ends exactly at the text end."""
    if size < 1 or not 0 <= overlap < size:
        raise ValueError("need size >= 1 and 0 <= overlap < size")
    if len(text) <= size:
        return [text]
    stride = size - overlap
    chunks = []
    start = 0
    while True:
        chunks.append(text[start : start + size])
        if start + size >= len(text):
            return chunks
        start += stride


@dataclass(frozen=True)
class ContextBundle:
    tool: tuple[tuple[MemoryChunk, float], ...] = ()
    retrieved_chat: tuple[tuple[MemoryChunk, float], ...] = ()
    recent_chat: tuple[MemoryChunk, ...] = ()

    def render(self) -> str:
        parts = []
        if self.tool:
            parts.append("## Tool memory")
            parts += [f"[{c.source.tool_id} #{c.source.call_id}] {c.text}" for c, _ in self.tool]
        if self.retrieved_chat:
            parts.append("## Earlier discussion")
            parts += [f"{c.source.speaker} (turn {c.source.turn_index}): {c.text}" for c, _ in self.retrieved_chat]
        if self.recent_chat:
            parts.append("## Recent discussion")
            parts += [f"{c.source.speaker} (turn {c.source.turn_index}): {c.text}" for c in self.recent_chat]
        return "\n".join(parts)


class MemoryStore:
    def __init__(
        self,
        embedder: Embedder | None = None,
        chunk_size: int = 2000,
        chunk_overlap: int = 200,
    ):
        self.embedder = embedder or _REFERENCE
        self.dimension = self.embedder.dimension
        self.chunk_size = chunk_size
        self.chunk_overlap = chunk_overlap
        self.chat: list[MemoryChunk] = []
        self.tool: list[MemoryChunk] = []
        self._ids: Iterator[int] = itertools.count()

    def share_tools_with(self) -> "MemoryStore":
        """New store with empty chat memory sharing this store's tool memory."""
        other = MemoryStore(self.embedder, self.chunk_size, self.chunk_overlap)
        other.tool = self.tool
        other._ids = self._ids
        return other

    def append(self, source: ChatSource | ToolSource, text: str, embedder: Embedder | None = None) -> list[int]:
        if not text:
            raise ValueError("cannot append empty text to memory")
        embedder = embedder or self.embedder
        target = self.chat if isinstance(source, ChatSource) else self.tool
        ids = []
        for piece in chunk_text(text, self.chunk_size, self.chunk_overlap):
            vec = np.asarray(embedder.embed(piece), dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise EmbeddingDimensionError(f"embedding shape {vec.shape} != ({self.dimension},)")
            vec.setflags(write=False)
            chunk = MemoryChunk(next(self._ids), source, piece, vec)
            target.append(chunk)
            ids.append(chunk.id)
        return ids

    def chunks(self, scope: Scope = "both") -> list[MemoryChunk]:
        if scope == "chat":
            return list(self.chat)
        if scope == "tool":
            return list(self.tool)
        return sorted(self.chat + self.tool, key=lambda c: c.id)

    # -- audit dump -----------------------------------------------------------

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for chunk in self.chunks("both"):
                fh.write(json.dumps(chunk.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder | None = None) -> "MemoryStore":
        """Rebuild a store from a dump, recomputing embeddings."""
        store = cls(embedder)
        max_id = -1
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            src = rec["source"]
            if src["kind"] == "chat":
                source: ChatSource | ToolSource = ChatSource(src["speaker"], src["turn_index"])
            else:
                source = ToolSource(src["tool_id"], src["call_id"])
            vec = np.asarray(store.embedder.embed(rec["text"]), dtype=np.float64)
            vec.setflags(write=False)
            chunk = MemoryChunk(rec["id"], source, rec["text"], vec)
            (store.chat if src["kind"] == "chat" else store.tool).append(chunk)
            max_id = max(max_id, rec["id"])
        store._ids = itertools.count(max_id + 1)
        return store


def retrieve(
    store: MemoryStore,
    query_text: str,
    k: int,
    scope: Scope = "both",
    embedder: Embedder | None = None,
    exclude: Iterable[int] = (),
) -> list[tuple[MemoryChunk, float]]:
    """Top-``k`` chunks by cosine similarity to the query.

    Ordering is (score desc, recency desc, id desc). Zero-vector chunks and
    ids in ``exclude`` are never candidates.
    """
    if k <= 0:
        return []
    embedder = embedder or store.embedder
    skip = set(exclude)
    candidates = [c for c in store.chunks(scope) if c.id not in skip and np.any(c.embedding)]
    if not candidates:
        return []
    q = np.asarray(embedder.embed(query_text), dtype=np.float64)
    if not np.any(q):
        scores = np.zeros(len(candidates))
    else:
        matrix = np.stack([c.embedding for c in candidates])
        scores = np.round(matrix @ q, SCORE_DECIMALS)
    ranked = sorted(
        zip(candidates, scores.tolist()),
        key=lambda cs: (-cs[1], -cs[0].source.recency, -cs[0].id),
    )
    return ranked[:k]


def build_context(
    store: MemoryStore,
    agent: str,
    recent_window: int,
    k: int,
    query_text: str,
) -> ContextBundle:
    """Recent chat verbatim plus retrieved older chat and tool chunks.

    "Recent" is counted in messages, so every chunk of the last
    ``recent_window`` messages is included and withheld from retrieval.
    """
    messages: list[tuple[str, int]] = []
    for c in store.chat:
        key = (c.source.speaker, c.source.turn_index)
        if not messages or messages[-1] != key:
            messages.append(key)
    recent_keys = set(messages[-recent_window:]) if recent_window > 0 else set()
    recent = tuple(c for c in store.chat if (c.source.speaker, c.source.turn_index) in recent_keys)
    recent_ids = {c.id for c in recent}
    return ContextBundle(
        tool=tuple(retrieve(store, query_text, k, "tool")),
        retrieved_chat=tuple(retrieve(store, query_text, k, "chat", exclude=recent_ids)),
        recent_chat=recent,
    )


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
