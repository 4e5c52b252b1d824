"""Embedding store with exact and accelerated kNN, duplicate grouping, and
duplication statistics.

Similarity is cosine on unit vectors, i.e. a plain dot product.  The exact
mode is an exhaustive scan; the accelerated mode partitions records with a
coarse k-means and probes the closest partitions, reporting recall against
nothing (callers compare against exact mode when they need a figure).

File formats:
  embeddings  magic "EMB1" | u32 LE count | u32 LE dim
              | count x u64 LE ids | count x dim f32 LE vectors
  captions    JSONL {"id": u64, "text": str, "image": optional relative path}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

UNIT_NORM_TOLERANCE = 1e-4
EMB1_MAGIC = b"EMB1"

# Fraction of partitions probed by default in accelerated mode. Unstructured
# vectors spread their neighbors across partitions, so the default is
# conservative; clustered corpora can probe far fewer.
DEFAULT_PROBE_FRACTION = 7 / 8


@dataclass(frozen=True)
class CaptionRecord:
    """A prompt with an optional paired reference image (path relative to the caption file)."""

    id: int
    text: str
    image: str | None = None


@dataclass(frozen=True)
class EmbeddingRecord:
    item_id: int
    vector: np.ndarray


@dataclass(frozen=True)
class DuplicateGroup:
    group_id: int
    member_ids: tuple[int, ...]
    prompts: tuple[str, ...]  # aligned with member_ids; empty strings when unknown

    def __len__(self) -> int:
        return len(self.member_ids)


class EmbeddingIndex:
    """Sealed id -> unit-vector store. Built once; queries are read-only."""

    def __init__(self, ids: np.ndarray, vectors: np.ndarray):
        ids = np.asarray(ids, dtype=np.uint64)
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or len(ids) != len(vectors):
            raise ValueError("ids and vectors must be parallel, vectors 2-D")
        if len(ids) == 0:
            raise ValueError("index must contain at least one record")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        norms = np.linalg.norm(vectors, axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOLERANCE:
            raise ValueError(f"vectors must be unit norm within {UNIT_NORM_TOLERANCE}, worst {worst:.2e}")
        self._ids = ids
        self._vectors = vectors
        self._partitions: _CoarsePartitions | None = None

    @property
    def dimension(self) -> int:
        return self._vectors.shape[1]

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def vector_of(self, item_id: int) -> np.ndarray:
        pos = np.nonzero(self._ids == np.uint64(item_id))[0]
        if len(pos) == 0:
            raise KeyError(f"item {item_id} not in index")
        return self._vectors[pos[0]]

    def enable_acceleration(self, n_clusters: int | None = None, seed: int = 0) -> None:
        if n_clusters is None:
            n_clusters = max(1, int(np.sqrt(len(self))))
        self._partitions = _CoarsePartitions.build(self._vectors, n_clusters, seed)

    def search(
        self, query: np.ndarray, k: int, mode: str = "exact", probes: int | None = None
    ) -> list[tuple[int, float]]:
        """Top-k (item_id, cosine similarity), descending, ties broken by ascending id.

        The query is normalized internally. "accelerated" mode requires
        enable_acceleration() and can always fall back to "exact"; probes
        defaults to DEFAULT_PROBE_FRACTION of the partitions.
        """
        if k > len(self):
            raise ValueError(f"k={k} exceeds index size {len(self)}")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise ValueError(f"query must have dimension {self.dimension}")
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("query must be nonzero")
        q = q / norm

        if mode == "exact":
            candidates = np.arange(len(self))
        elif mode == "accelerated":
            if self._partitions is None:
                raise ValueError("accelerated mode requires enable_acceleration()")
            if probes is None:
                probes = int(np.ceil(DEFAULT_PROBE_FRACTION * len(self._partitions.centers)))
            candidates = self._partitions.candidate_rows(q, probes)
            if len(candidates) < k:
                candidates = np.arange(len(self))  # exact fallback
        else:
            raise ValueError(f"unknown mode {mode!r}")

        sims = self._vectors[candidates] @ q
        order = np.lexsort((self._ids[candidates], -sims))[:k]
        rows = candidates[order]
        return [(int(self._ids[r]), float(self._vectors[r] @ q)) for r in rows]


class _CoarsePartitions:
    """Deterministic Lloyd k-means over the stored vectors."""

    def __init__(self, centers: np.ndarray, assignment: np.ndarray):
        self.centers = centers
        self.assignment = assignment

    @staticmethod
    def build(vectors: np.ndarray, n_clusters: int, seed: int, iterations: int = 10) -> "_CoarsePartitions":
        n = len(vectors)
        n_clusters = min(n_clusters, n)
        picks = np.random.default_rng(seed).permutation(n)[:n_clusters]
        centers = vectors[picks].copy()
        assignment = np.zeros(n, dtype=np.int64)
        for _ in range(iterations):
            sims = vectors @ centers.T
            assignment = sims.argmax(axis=1)
            for c in range(n_clusters):
                members = vectors[assignment == c]
                if len(members):
                    mean = members.mean(axis=0)
                    norm = np.linalg.norm(mean)
                    if norm > 0:
                        centers[c] = mean / norm
        return _CoarsePartitions(centers, assignment)

    def candidate_rows(self, q: np.ndarray, probes: int) -> np.ndarray:
        ranked = np.argsort(-(self.centers @ q), kind="stable")[: max(1, probes)]
        return np.nonzero(np.isin(self.assignment, ranked))[0]


def knn_search(index: EmbeddingIndex, query: np.ndarray, k: int, **kwargs) -> list[tuple[int, float]]:
    return index.search(query, k, **kwargs)


def measure_recall(index: EmbeddingIndex, queries: np.ndarray, k: int, probes: int | None = None) -> float:
    """Recall of accelerated search against the exact scan over a query batch."""
    hits = 0
    for q in queries:
        exact = {i for i, _ in index.search(q, k, mode="exact")}
        fast = {i for i, _ in index.search(q, k, mode="accelerated", probes=probes)}
        hits += len(exact & fast)
    return hits / (k * len(queries))


def group_duplicates(
    index: EmbeddingIndex,
    sim_threshold: float,
    prompts: dict[int, str] | None = None,
) -> list[DuplicateGroup]:
    """Greedy leader clustering: walk items by descending id; each item joins
    the first existing leader within sim_threshold, else becomes a leader.
    Deterministic; output is a partition of the index."""
    if not 0.0 < sim_threshold < 1.0:
        raise ValueError(f"sim_threshold must be in (0, 1), got {sim_threshold}")
    order = np.argsort(index.ids, kind="stable")[::-1]
    vectors = index._vectors
    ids = index.ids

    leader_rows: list[int] = []
    leader_matrix = np.empty((len(index), index.dimension))
    members: list[list[int]] = []
    for row in order:
        v = vectors[row]
        joined = False
        if leader_rows:
            sims = leader_matrix[: len(leader_rows)] @ v
            hits = np.nonzero(sims >= sim_threshold)[0]
            if len(hits):
                members[int(hits[0])].append(int(ids[row]))
                joined = True
        if not joined:
            leader_matrix[len(leader_rows)] = v
            leader_rows.append(int(row))
            members.append([int(ids[row])])

    groups = []
    for leader_row, member_ids in zip(leader_rows, members):
        ordered = tuple(sorted(member_ids))
        texts = tuple((prompts or {}).get(m, "") for m in ordered)
        groups.append(DuplicateGroup(group_id=int(ids[leader_row]), member_ids=ordered, prompts=texts))
    return groups


def normalize_prompt(text: str) -> str:
    return " ".join(text.lower().split())


def multimodal_dup_rate(group: DuplicateGroup) -> float:
    """Largest share of a group whose normalized prompts are identical."""
    if len(group) == 0:
        raise ValueError("group is empty")
    counts: dict[str, int] = {}
    for text in group.prompts:
        key = normalize_prompt(text)
        counts[key] = counts.get(key, 0) + 1
    return max(counts.values()) / len(group)


def topk_by_duplication(groups: list[DuplicateGroup], k: int) -> list[int]:
    """Member ids ranked by their group size descending, ties by ascending id."""
    total = sum(len(g) for g in groups)
    if k > total:
        raise ValueError(f"k={k} exceeds total member count {total}")
    ranked = sorted(
        ((len(g), m) for g in groups for m in g.member_ids),
        key=lambda t: (-t[0], t[1]),
    )
    return [m for _, m in ranked[:k]]


def masked_dup_rate(group_images, mask, delta: float) -> float:
    """Fraction of image pairs whose masked RMSE is <= delta."""
    from verbatim_audit.imaging import masked_rmse

    if len(group_images) < 2:
        raise ValueError("need at least two images")
    close = 0
    pairs = 0
    for i in range(len(group_images)):
        for j in range(i + 1, len(group_images)):
            pairs += 1
            if masked_rmse(group_images[i], group_images[j], mask) <= delta:
                close += 1
    return close / pairs


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_embeddings(path, ids: np.ndarray, vectors: np.ndarray) -> None:
    ids = np.asarray(ids, dtype="<u8")
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or len(ids) != len(vectors):
        raise ValueError("ids and vectors must be parallel, vectors 2-D")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", EMB1_MAGIC, len(ids), vectors.shape[1]))
        f.write(ids.tobytes())
        f.write(vectors.tobytes())


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) != 12:
            raise ValueError("truncated embedding file")
        magic, count, dim = struct.unpack("<4sII", header)
        if magic != EMB1_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {EMB1_MAGIC!r}")
        ids = np.frombuffer(f.read(8 * count), dtype="<u8")
        vectors = np.frombuffer(f.read(4 * count * dim), dtype="<f4")
        if len(ids) != count or len(vectors) != count * dim:
            raise ValueError("truncated embedding file")
    return ids.astype(np.uint64), vectors.reshape(count, dim).astype(np.float64)


def load_index(path) -> EmbeddingIndex:
    ids, vectors = read_embeddings(path)
    # f32 storage drifts the norm; renormalize in f64 before sealing.
    vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    return EmbeddingIndex(ids, vectors)


def write_captions(path, records: list[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj: dict = {"id": rec.id, "text": rec.text}
            if rec.image is not None:
                obj["image"] = rec.image
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_captions(path) -> list[CaptionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(CaptionRecord(id=int(obj["id"]), text=obj["text"], image=obj.get("image")))
    return records
