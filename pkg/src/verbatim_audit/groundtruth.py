"""Ground-truth verbatim labeling: exact, template, and retrieval verbatims.

Exact: the caption's paired reference image is reproduced by full synthesis
within delta_v (min over seeds).  Retrieval: some corpus image is reproduced
within delta_v, found by nearest-neighbor search, no mask.  Template: a
near-duplicate family's shared content is reproduced once its region of
variation is masked out; the mask is estimated automatically from the
family's per-pixel luma stability.

Label precedence is Exact > Retrieval > Template > NonVerbatim; every
rejected candidate records a reason code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from verbatim_audit.errors import DegenerateMaskError
from verbatim_audit.genbackend.contracts import CorpusStore, EmbedderContract, GeneratorContract
from verbatim_audit.imaging import (
    DEFAULT_EDGE_THRESHOLD,
    Image,
    Mask,
    edge_map,
    masked_rmse,
    rmse,
    to_grayscale,
)
from verbatim_audit.retrieval import CaptionRecord, EmbeddingIndex

KIND_EXACT = "exact"
KIND_TEMPLATE = "template"
KIND_RETRIEVAL = "retrieval"
KIND_NON_VERBATIM = "non_verbatim"

REASON_SCREENED = "screened_out"
REASON_DEGENERATE_MASK = "degenerate_mask"
REASON_NO_GROUP = "no_duplicate_group"
REASON_ABOVE_THRESHOLD = "above_threshold"

MIN_MASK_FRACTION = 0.10
MIN_GROUP_FOR_MASK = 3


@dataclass(frozen=True)
class GtConfig:
    delta_v: float = 0.12
    delta_v_masked: float | None = None  # None: reuse delta_v for masked distances
    j: int = 4
    k: int = 10
    theta_var: float = 0.05
    white_frac_max: float = 0.6
    min_edge_density: float = 0.01
    t_edge: float = DEFAULT_EDGE_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.delta_v < 1.0:
            raise ValueError("delta_v must be in (0, 1)")
        if self.j < 1 or self.k < 1:
            raise ValueError("j and k must be >= 1")

    def masked_threshold(self) -> float:
        return self.delta_v if self.delta_v_masked is None else self.delta_v_masked


@dataclass(frozen=True)
class VerbatimLabel:
    caption_id: int
    kind: str
    distance: float | None
    witness: dict | None = None
    reason: str | None = None

    def __post_init__(self):
        if self.kind not in (KIND_EXACT, KIND_TEMPLATE, KIND_RETRIEVAL, KIND_NON_VERBATIM):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if self.kind != KIND_NON_VERBATIM and self.witness is None:
            raise ValueError(f"{self.kind} label requires a witness")

    @property
    def is_verbatim(self) -> bool:
        return self.kind != KIND_NON_VERBATIM


@dataclass(frozen=True)
class LabelResult:
    label: VerbatimLabel
    mask: Mask | None = None  # estimated variation mask backing a template label


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def mv_distance(
    x: Image, caption: CaptionRecord, gen: GeneratorContract, seeds: list[int]
) -> tuple[float, int]:
    """Min over seeds of rmse(x, full synthesis); returns (distance, arg-min seed)."""
    if not seeds:
        raise ValueError("need at least one seed")
    best = np.inf
    best_seed = seeds[0]
    for seed in seeds:
        d = rmse(x, gen.generate(caption, seed, timesteps=None))
        if d < best:
            best, best_seed = d, seed
    return float(best), best_seed


def label_matching_verbatim(
    x: Image, caption: CaptionRecord, gen: GeneratorContract, cfg: GtConfig, seeds: list[int]
) -> VerbatimLabel:
    distance, best_seed = mv_distance(x, caption, gen, seeds)
    if distance <= cfg.delta_v:
        return VerbatimLabel(
            caption_id=caption.id,
            kind=KIND_EXACT,
            distance=distance,
            witness={"reference_id": caption.id, "seed": best_seed},
        )
    return VerbatimLabel(
        caption_id=caption.id, kind=KIND_NON_VERBATIM, distance=distance, reason=REASON_ABOVE_THRESHOLD
    )


def tv_distance(
    gen_img: Image,
    index: EmbeddingIndex,
    embedder: EmbedderContract,
    store: CorpusStore,
    mask: Mask,
    k: int,
) -> tuple[float, int, int]:
    """Min over the k nearest corpus images of masked RMSE to the generation.

    Returns (distance, 1-based neighbor rank, neighbor item id).
    """
    hits = index.search(embedder.embed(gen_img), min(k, len(index)))
    best = (np.inf, 0, -1)
    for rank, (item_id, _) in enumerate(hits, start=1):
        d = masked_rmse(store.get_image(item_id), gen_img, mask)
        if d < best[0]:
            best = (d, rank, item_id)
    return float(best[0]), best[1], best[2]


# ---------------------------------------------------------------------------
# Mask estimation and screening
# ---------------------------------------------------------------------------


def _majority_smooth(bits: np.ndarray) -> np.ndarray:
    # Quorum of 6 (not 5) keeps borderline pixels in the variation region:
    # a plain majority flips the corners of rectangular variation regions
    # into the compared set, leaking variation into every masked distance.
    counts = ndimage.correlate(bits.astype(np.float64), np.ones((3, 3)), mode="nearest")
    return counts >= 6.0


def estimate_variation_mask(dups: list[Image], theta_var: float = 0.05) -> Mask:
    """Stable-region mask from a near-duplicate set: 1 where per-pixel luma
    standard deviation stays within theta_var, 3x3 majority smoothed."""
    if len(dups) < MIN_GROUP_FOR_MASK:
        raise ValueError(f"need >= {MIN_GROUP_FOR_MASK} images, got {len(dups)}")
    shape = dups[0].data.shape[:2]
    if any(d.data.shape[:2] != shape for d in dups):
        raise ValueError("duplicate images must share dimensions")
    lumas = np.stack([to_grayscale(d).data[:, :, 0] for d in dups])
    stable = lumas.std(axis=0) <= theta_var
    stable = _majority_smooth(stable)
    if stable.sum() < MIN_MASK_FRACTION * stable.size:
        raise DegenerateMaskError(
            f"stable region covers {stable.mean():.1%} < {MIN_MASK_FRACTION:.0%} of pixels"
        )
    return Mask(stable)


def candidate_screen(x: Image, cfg: GtConfig) -> bool:
    """Reject near-white and texture-free images that defeat pixel distances."""
    luma = to_grayscale(x).data[:, :, 0]
    if float((luma > 0.95).mean()) > cfg.white_frac_max:
        return False
    density = edge_map(x, cfg.t_edge).set_count / luma.size
    return density >= cfg.min_edge_density


# ---------------------------------------------------------------------------
# Combined labeling
# ---------------------------------------------------------------------------


def label_template_or_retrieval(
    caption: CaptionRecord,
    gen: GeneratorContract,
    index: EmbeddingIndex,
    embedder: EmbedderContract,
    store: CorpusStore,
    dup_members: dict[int, tuple[int, ...]],
    cfg: GtConfig,
    seeds: list[int],
    gens: list[Image] | None = None,
) -> LabelResult:
    """Retrieval check (no mask) first, then the masked template check against
    the best neighbor's duplicate family."""
    if gens is None:
        gens = [gen.generate(caption, seed, timesteps=None) for seed in seeds]
    usable = [(seed, g) for seed, g in zip(seeds, gens) if candidate_screen(g, cfg)]
    if not usable:
        return LabelResult(
            VerbatimLabel(caption_id=caption.id, kind=KIND_NON_VERBATIM, distance=None, reason=REASON_SCREENED)
        )

    full = Mask.full(gens[0].height, gens[0].width)
    neighbor_lists = []
    best = (np.inf, 0, -1, seeds[0])  # distance, rank, item, seed
    for seed, g in usable:
        hits = index.search(embedder.embed(g), min(cfg.k, len(index)))
        neighbor_lists.append((seed, g, hits))
        for rank, (item_id, _) in enumerate(hits, start=1):
            d = masked_rmse(store.get_image(item_id), g, full)
            if d < best[0]:
                best = (d, rank, item_id, seed)
    distance, rank, item_id, seed = best
    if distance <= cfg.delta_v:
        return LabelResult(
            VerbatimLabel(
                caption_id=caption.id,
                kind=KIND_RETRIEVAL,
                distance=distance,
                witness={"reference_id": item_id, "seed": seed, "neighbor_rank": rank},
            )
        )

    # Masked pass: each neighbor is compared under the variation mask of its
    # own duplicate family (min over seeds and neighbor ranks).
    mask_cache: dict[int, Mask | None] = {}

    def mask_for(neighbor_id: int) -> Mask | None:
        group = dup_members.get(neighbor_id)
        if group is None or len(group) < MIN_GROUP_FOR_MASK:
            return None
        leader = min(group)
        if leader not in mask_cache:
            try:
                mask_cache[leader] = estimate_variation_mask(
                    [store.get_image(m) for m in group], cfg.theta_var
                )
            except DegenerateMaskError:
                mask_cache[leader] = None
        return mask_cache[leader]

    any_group = False
    masked_best = (np.inf, 0, -1, seeds[0])
    best_mask: Mask | None = None
    for seed, g, hits in neighbor_lists:
        for rank, (neighbor_id, _) in enumerate(hits, start=1):
            mask = mask_for(neighbor_id)
            if dup_members.get(neighbor_id) is not None and len(dup_members[neighbor_id]) >= MIN_GROUP_FOR_MASK:
                any_group = True
            if mask is None:
                continue
            d = masked_rmse(store.get_image(neighbor_id), g, mask)
            if d < masked_best[0]:
                masked_best = (d, rank, neighbor_id, seed)
                best_mask = mask
    m_distance, m_rank, m_item, m_seed = masked_best
    if best_mask is not None and m_distance <= cfg.masked_threshold():
        return LabelResult(
            VerbatimLabel(
                caption_id=caption.id,
                kind=KIND_TEMPLATE,
                distance=m_distance,
                witness={
                    "reference_id": m_item,
                    "seed": m_seed,
                    "neighbor_rank": m_rank,
                    "mask_id": min(dup_members[m_item]),
                },
            ),
            mask=best_mask,
        )
    if not any_group:
        reason = REASON_NO_GROUP
    elif best_mask is None:
        reason = REASON_DEGENERATE_MASK
    else:
        reason = REASON_ABOVE_THRESHOLD
        distance = min(distance, m_distance)
    return LabelResult(
        VerbatimLabel(caption_id=caption.id, kind=KIND_NON_VERBATIM, distance=float(distance), reason=reason)
    )


def label_caption(
    caption: CaptionRecord,
    x: Image | None,
    gen: GeneratorContract,
    index: EmbeddingIndex | None,
    embedder: EmbedderContract | None,
    store: CorpusStore | None,
    dup_members: dict[int, tuple[int, ...]],
    cfg: GtConfig,
    seeds: list[int],
) -> LabelResult:
    """Full precedence walk for one caption, generating each seed exactly once."""
    gens = [gen.generate(caption, seed, timesteps=None) for seed in seeds]

    exact_distance = None
    if x is not None:
        exact_distance = np.inf
        best_seed = seeds[0]
        for seed, g in zip(seeds, gens):
            d = rmse(x, g)
            if d < exact_distance:
                exact_distance, best_seed = d, seed
        if exact_distance <= cfg.delta_v:
            return LabelResult(
                VerbatimLabel(
                    caption_id=caption.id,
                    kind=KIND_EXACT,
                    distance=float(exact_distance),
                    witness={"reference_id": caption.id, "seed": best_seed},
                )
            )

    if index is None or embedder is None or store is None:
        return LabelResult(
            VerbatimLabel(
                caption_id=caption.id,
                kind=KIND_NON_VERBATIM,
                distance=None if exact_distance is None else float(exact_distance),
                reason=REASON_ABOVE_THRESHOLD,
            )
        )
    return label_template_or_retrieval(
        caption, gen, index, embedder, store, dup_members, cfg, seeds, gens=gens
    )


# ---------------------------------------------------------------------------
# Label dumps
# ---------------------------------------------------------------------------


def write_labels(path, labels: list[VerbatimLabel]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lab in sorted(labels, key=lambda l: l.caption_id):
            obj: dict = {"caption_id": lab.caption_id, "kind": lab.kind, "distance": lab.distance}
            if lab.witness is not None:
                obj["witness"] = lab.witness
            if lab.reason is not None:
                obj["reason"] = lab.reason
            f.write(json.dumps(obj) + "\n")


def read_labels(path) -> list[VerbatimLabel]:
    labels = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            labels.append(
                VerbatimLabel(
                    caption_id=int(obj["caption_id"]),
                    kind=obj["kind"],
                    distance=obj["distance"],
                    witness=obj.get("witness"),
                    reason=obj.get("reason"),
                )
            )
    return labels
