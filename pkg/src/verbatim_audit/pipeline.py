"""Staged attack orchestration: whitebox prefilter, blackbox edge scoring,
optional repetition post-filter, ground-truth labeling, precision curves.

Stage containment is strict: the blackbox stage scores only captions emitted
by the whitebox prefilter, the post-filter only captions emitted by the
blackbox stage.  Every backend call is ledgered per stage, and reports are
self-contained: curves can be recomputed from the persisted rankings plus
the adjacent score/label JSONL files.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from verbatim_audit import rng
from verbatim_audit.errors import ConfigError, FailureBudgetExceeded, TransportError
from verbatim_audit.genbackend.contracts import CorpusStore, EmbedderContract
from verbatim_audit.genbackend.ledger import CallLedger, LedgeredBackend
from verbatim_audit.groundtruth import (
    GtConfig,
    LabelResult,
    VerbatimLabel,
    label_caption,
    read_labels,
    write_labels,
)
from verbatim_audit.imaging import Mask, save_mask
from verbatim_audit.retrieval import (
    CaptionRecord,
    DuplicateGroup,
    EmbeddingIndex,
    group_duplicates,
    multimodal_dup_rate,
    topk_by_duplication,
)
from verbatim_audit.scoring import (
    DcsScore,
    EcsScore,
    ScoreThresholds,
    ecs_score,
    write_dcs_scores,
    write_ecs_scores,
)

REPORT_FORMAT_VERSION = 1
DEFAULT_GROUP_THRESHOLD = 0.90

STAGE_WHITEBOX = "whitebox"
STAGE_BLACKBOX = "blackbox"
STAGE_POSTFILTER = "postfilter"
STAGE_LABELING = "labeling"


@dataclass(frozen=True)
class PostfilterConfig:
    enabled: bool = False
    n_samples: int = 32  # paper-scale runs use 500
    pair_delta: float = 0.12
    component_min_frac: float = 0.1
    use_masks: bool = False  # filter on mask-aware distances where masks exist

    def __post_init__(self):
        if self.enabled and self.n_samples < 2:
            raise ConfigError("postfilter.n_samples must be >= 2 when enabled")


@dataclass(frozen=True)
class AttackRunConfig:
    captions_path: str
    embeddings_path: str | None = None
    pool_size: int | None = None  # restrict candidates to the most duplicated
    mode: str = "blackbox"  # whitebox | blackbox
    n_pre: int = 30_000
    thresholds: ScoreThresholds = field(default_factory=ScoreThresholds)
    gt: GtConfig = field(default_factory=GtConfig)
    postfilter: PostfilterConfig = field(default_factory=PostfilterConfig)
    sigma1: float | None = None  # None: backend-reported maximum noise level
    group_threshold: float = DEFAULT_GROUP_THRESHOLD
    out_dir: str = "run"
    run_seed: int = 0
    workers: int = 1
    failure_budget: float = 0.01
    label_enabled: bool = True

    def __post_init__(self):
        if self.mode not in ("whitebox", "blackbox"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.n_pre < 1:
            raise ConfigError("n_pre must be >= 1")
        if not 0.0 <= self.failure_budget <= 1.0:
            raise ConfigError("failure_budget must be in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class PrecisionCurve:
    points: tuple[tuple[int, int, float], ...]  # (n_selected, n_true, precision)

    def as_lists(self) -> list[list]:
        return [[n, t, p] for n, t, p in self.points]

    @staticmethod
    def from_lists(rows: list) -> "PrecisionCurve":
        return PrecisionCurve(tuple((int(n), int(t), float(p)) for n, t, p in rows))


def evaluate_precision(ranked: list[int], labels: dict[int, VerbatimLabel]) -> PrecisionCurve:
    """Precision at every ranking prefix; a verbatim is any kind != non_verbatim."""
    missing = [cid for cid in ranked if cid not in labels]
    if missing:
        raise ValueError(f"{len(missing)} ranked captions lack labels, e.g. {missing[:3]}")
    points = []
    true_count = 0
    for n, cid in enumerate(ranked, start=1):
        if labels[cid].is_verbatim:
            true_count += 1
        points.append((n, true_count, true_count / n))
    return PrecisionCurve(tuple(points))


def per_kind_curves(ranked: list[int], labels: dict[int, VerbatimLabel]) -> dict[str, PrecisionCurve]:
    curves = {}
    for kind in ("exact", "template", "retrieval"):
        points = []
        hits = 0
        for n, cid in enumerate(ranked, start=1):
            if labels[cid].kind == kind:
                hits += 1
            points.append((n, hits, hits / n))
        curves[kind] = PrecisionCurve(tuple(points))
    return curves


# ---------------------------------------------------------------------------
# Stage runners
# ---------------------------------------------------------------------------


class _FailureTracker:
    def __init__(self, total: int, budget: float):
        self.total = max(total, 1)
        self.budget = budget
        self.failures: list[tuple[int, str]] = []

    def record(self, caption_id: int, error: Exception) -> None:
        self.failures.append((caption_id, f"{type(error).__name__}: {error}"))
        if len(self.failures) / self.total > self.budget:
            raise FailureBudgetExceeded(
                f"{len(self.failures)}/{self.total} captions failed (budget {self.budget:.1%}); "
                f"last: caption {caption_id}: {error}"
            )


def _map_captions(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def whitebox_attack(
    backend: LedgeredBackend,
    captions: list[CaptionRecord],
    cfg: AttackRunConfig,
) -> tuple[list[int], list[DcsScore], list[tuple[int, str]]]:
    """Denoising-residual score per caption, ranked descending."""
    backend.stage = STAGE_WHITEBOX
    sigma = cfg.sigma1 if cfg.sigma1 is not None else backend.capabilities.sigma_max
    tracker = _FailureTracker(len(captions), cfg.failure_budget)

    def score_one(rec: CaptionRecord) -> DcsScore | None:
        noise_seed = rng.derive_seed(cfg.run_seed, rng.TAG_DCS_NOISE, rec.id)
        try:
            return DcsScore(caption_id=rec.id, value=backend.dcs(rec, noise_seed, sigma))
        except (TransportError, ValueError) as exc:
            tracker.record(rec.id, exc)
            return None

    scores = [s for s in _map_captions(score_one, captions, cfg.workers) if s is not None]
    ranked = [s.caption_id for s in sorted(scores, key=lambda s: (-s.value, s.caption_id))]
    return ranked, scores, tracker.failures


def blackbox_attack(
    backend: LedgeredBackend,
    candidates: list[CaptionRecord],
    cfg: AttackRunConfig,
) -> tuple[list[int], list[EcsScore], list[tuple[int, str]]]:
    """Edge-consistency score over one-step generations, ranked descending."""
    if not backend.capabilities.supports_timesteps:
        raise ConfigError("backend does not support timestep control; blackbox stage impossible")
    backend.stage = STAGE_BLACKBOX
    tracker = _FailureTracker(len(candidates), cfg.failure_budget)

    def score_one(rec: CaptionRecord) -> EcsScore | None:
        seeds = [
            rng.derive_seed(cfg.run_seed, rng.TAG_ECS_SEED, rec.id, i)
            for i in range(cfg.thresholds.j)
        ]
        try:
            return ecs_score(backend, rec, cfg.thresholds, seeds)
        except (TransportError, ValueError) as exc:
            tracker.record(rec.id, exc)
            return None

    scores = [s for s in _map_captions(score_one, candidates, cfg.workers) if s is not None]
    ranked = [s.caption_id for s in sorted(scores, key=lambda s: (-s.value, s.caption_id))]
    return ranked, scores, tracker.failures


@dataclass(frozen=True)
class PostfilterOutcome:
    flagged_unmasked: tuple[int, ...]
    flagged_masked: tuple[int, ...]
    component_sizes: dict[int, int]

    def flagged(self, use_masks: bool) -> set[int]:
        return set(self.flagged_masked if use_masks else self.flagged_unmasked)


def _pairwise_rmse_matrix(stack: np.ndarray) -> np.ndarray:
    flat = stack.reshape(len(stack), -1)
    sq = np.einsum("ij,ij->i", flat, flat)
    gram = flat @ flat.T
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0) / flat.shape[1]
    return np.sqrt(d2)


def _largest_component(adjacency: np.ndarray) -> int:
    n = len(adjacency)
    seen = np.zeros(n, dtype=bool)
    best = 0
    for start in range(n):
        if seen[start]:
            continue
        frontier = [start]
        seen[start] = True
        size = 0
        while frontier:
            node = frontier.pop()
            size += 1
            for nxt in np.nonzero(adjacency[node] & ~seen)[0]:
                seen[nxt] = True
                frontier.append(int(nxt))
        best = max(best, size)
    return best


def carlini_postfilter(
    backend: LedgeredBackend,
    candidates: list[CaptionRecord],
    cfg: AttackRunConfig,
    masks: dict[int, Mask] | None = None,
) -> PostfilterOutcome:
    """Repetition test: flag captions whose full-synthesis samples form a large
    near-duplicate cluster (pairwise RMSE <= pair_delta)."""
    pf = cfg.postfilter
    backend.stage = STAGE_POSTFILTER
    masks = masks or {}
    flagged_plain: list[int] = []
    flagged_masked: list[int] = []
    component_sizes: dict[int, int] = {}
    # A repetition needs at least two coinciding samples; the fraction rule
    # alone would flag singletons at small n_samples.
    min_size = max(2.0, pf.component_min_frac * pf.n_samples)
    for rec in candidates:
        seeds = [
            rng.derive_seed(cfg.run_seed, rng.TAG_POSTFILTER_SEED, rec.id, s)
            for s in range(pf.n_samples)
        ]
        stack = np.stack([backend.generate(rec, s, timesteps=None).data for s in seeds])
        dist = _pairwise_rmse_matrix(stack)
        size = _largest_component(dist <= pf.pair_delta)
        component_sizes[rec.id] = size
        if size >= min_size:
            flagged_plain.append(rec.id)
        mask = masks.get(rec.id)
        if mask is not None:
            keep = np.repeat(mask.bits[:, :, np.newaxis], stack.shape[3], axis=2).ravel()
            masked_flat = stack.reshape(len(stack), -1)[:, keep]
            m_size = _largest_component(_pairwise_rmse_matrix(masked_flat) <= pf.pair_delta)
            if m_size >= min_size:
                flagged_masked.append(rec.id)
        elif size >= min_size:
            flagged_masked.append(rec.id)
    return PostfilterOutcome(tuple(flagged_plain), tuple(flagged_masked), component_sizes)


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------


@dataclass
class RunInputs:
    """Everything the attack needs beyond the config: backend and, when the
    reference corpus is available, retrieval surfaces for labeling."""

    backend: object
    captions: list[CaptionRecord]
    index: EmbeddingIndex | None = None
    embedder: EmbedderContract | None = None
    store: CorpusStore | None = None


def _dup_statistics(groups: list[DuplicateGroup]) -> dict:
    return {
        "group_count": len(groups),
        "group_sizes": sorted((len(g) for g in groups), reverse=True),
        "multimodal_rates": [round(multimodal_dup_rate(g), 6) for g in groups],
    }


def label_candidates(
    backend: LedgeredBackend,
    candidates: list[CaptionRecord],
    inputs: RunInputs,
    cfg: AttackRunConfig,
    dup_members: dict[int, tuple[int, ...]],
) -> tuple[dict[int, VerbatimLabel], dict[int, Mask]]:
    backend.stage = STAGE_LABELING
    labels: dict[int, VerbatimLabel] = {}
    masks: dict[int, Mask] = {}

    def paired_image(rec: CaptionRecord):
        if inputs.store is not None and rec.image is not None and inputs.store.has_image(rec.id):
            return inputs.store.get_image(rec.id)
        return None

    def label_one(rec: CaptionRecord) -> LabelResult:
        seeds = [rng.derive_seed(cfg.run_seed, rng.TAG_GT_SEED, rec.id, i) for i in range(cfg.gt.j)]
        try:
            return label_caption(
                rec,
                paired_image(rec),
                backend,
                inputs.index,
                inputs.embedder,
                inputs.store,
                dup_members,
                cfg.gt,
                seeds,
            )
        except (FileNotFoundError, KeyError, TransportError, ValueError) as exc:
            # Missing corpus images or backend hiccups become per-caption
            # error records rather than aborting the whole labeling pass.
            return LabelResult(
                VerbatimLabel(
                    caption_id=rec.id,
                    kind="non_verbatim",
                    distance=None,
                    reason=f"error:{type(exc).__name__}: {exc}",
                )
            )

    for rec, result in zip(candidates, _map_captions(label_one, candidates, cfg.workers)):
        labels[rec.id] = result.label
        if result.mask is not None:
            masks[rec.id] = result.mask
    return labels, masks


def run_attack(cfg: AttackRunConfig, inputs: RunInputs) -> "RunReport":
    started = time.time()
    ledger = CallLedger()
    backend = LedgeredBackend(inputs.backend, ledger)

    by_id = {r.id: r for r in inputs.captions}
    groups: list[DuplicateGroup] = []
    dup_members: dict[int, tuple[int, ...]] = {}
    if inputs.index is not None:
        prompts = {r.id: r.text for r in inputs.captions}
        groups = group_duplicates(inputs.index, cfg.group_threshold, prompts)
        dup_members = {m: g.member_ids for g in groups for m in g.member_ids}

    if cfg.pool_size is not None:
        if not groups:
            raise ConfigError("pool_size requires an embedding file to rank duplication")
        pool_ids = [cid for cid in topk_by_duplication(groups, min(cfg.pool_size, len(by_id))) if cid in by_id]
        pool = [by_id[cid] for cid in pool_ids]
    else:
        pool = list(inputs.captions)
    if cfg.n_pre > len(pool):
        raise ConfigError(f"n_pre={cfg.n_pre} exceeds candidate pool size {len(pool)}")

    wb_ranked, dcs_scores, wb_failures = whitebox_attack(backend, pool, cfg)
    prefilter_ids = wb_ranked[: cfg.n_pre]
    stages: dict = {
        STAGE_WHITEBOX: {"scored": len(dcs_scores), "failures": len(wb_failures)},
    }

    ecs_scores: list[EcsScore] = []
    if cfg.mode == "blackbox":
        candidates = [by_id[cid] for cid in prefilter_ids]
        bb_ranked, ecs_scores, bb_failures = blackbox_attack(backend, candidates, cfg)
        stages[STAGE_BLACKBOX] = {"scored": len(ecs_scores), "failures": len(bb_failures)}
        main_ranking = bb_ranked
    else:
        main_ranking = prefilter_ids

    labels: dict[int, VerbatimLabel] = {}
    masks: dict[int, Mask] = {}
    if cfg.label_enabled:
        label_set = [by_id[cid] for cid in main_ranking]
        labels, masks = label_candidates(backend, label_set, inputs, cfg, dup_members)
        stages[STAGE_LABELING] = {
            "labeled": len(labels),
            "verbatims": sum(1 for l in labels.values() if l.is_verbatim),
        }

    postfilter_outcome: PostfilterOutcome | None = None
    postfiltered_ranking: list[int] | None = None
    if cfg.postfilter.enabled:
        candidates = [by_id[cid] for cid in main_ranking]
        postfilter_outcome = carlini_postfilter(backend, candidates, cfg, masks)
        keep = postfilter_outcome.flagged(cfg.postfilter.use_masks)
        postfiltered_ranking = [cid for cid in main_ranking if cid in keep]
        stages[STAGE_POSTFILTER] = {
            "tested": len(candidates),
            "flagged": len(postfiltered_ranking),
        }

    curves: dict = {}
    if labels:
        curves["main"] = evaluate_precision(main_ranking, labels).as_lists()
        curves["per_kind"] = {
            kind: c.as_lists() for kind, c in per_kind_curves(main_ranking, labels).items()
        }
        if postfiltered_ranking is not None:
            curves["postfiltered"] = evaluate_precision(postfiltered_ranking, labels).as_lists()

    report = RunReport(
        config=cfg,
        stages=stages,
        ledger=ledger,
        rankings={
            "whitebox": wb_ranked,
            "prefilter": prefilter_ids,
            "main": main_ranking,
            **({"postfiltered": postfiltered_ranking} if postfiltered_ranking is not None else {}),
        },
        curves=curves,
        duplication=_dup_statistics(groups) if groups else None,
        postfilter_outcome=postfilter_outcome,
        failures={
            STAGE_WHITEBOX: wb_failures,
            **({STAGE_BLACKBOX: bb_failures} if cfg.mode == "blackbox" else {}),
        },
        dcs_scores=dcs_scores,
        ecs_scores=ecs_scores,
        labels=labels,
        masks=masks,
        wall_clock_s=time.time() - started,
    )
    return report


def transfer_run(
    cfg: AttackRunConfig,
    prompts: list[CaptionRecord],
    inputs: RunInputs,
) -> tuple[dict, dict[int, VerbatimLabel]]:
    """Label a prompt list against a (possibly different) backend; no scoring.

    Returns a table-shaped summary {exact, template, retrieval, non_verbatim}
    plus the labels. Raises before any work if the backend is unreachable, so
    a failed transfer never yields a partial table.
    """
    ledger = CallLedger()
    backend = LedgeredBackend(inputs.backend, ledger)
    _ = backend.capabilities  # reachability probe for remote backends

    dup_members: dict[int, tuple[int, ...]] = {}
    if inputs.index is not None:
        prompt_texts = {r.id: r.text for r in inputs.captions}
        groups = group_duplicates(inputs.index, cfg.group_threshold, prompt_texts)
        dup_members = {m: g.member_ids for g in groups for m in g.member_ids}

    labels, _masks = label_candidates(backend, prompts, inputs, cfg, dup_members)
    summary = {"exact": 0, "template": 0, "retrieval": 0, "non_verbatim": 0}
    for label in labels.values():
        summary[label.kind] += 1
    return summary, labels


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def mask_files_by_witness(labels: dict[int, VerbatimLabel], masks: dict[int, Mask]) -> dict[int, Mask]:
    """Masks are persisted once per witness mask id (duplicate families share one)."""
    out: dict[int, Mask] = {}
    for cid, mask in masks.items():
        label = labels.get(cid)
        if label is not None and label.witness and "mask_id" in label.witness:
            out[int(label.witness["mask_id"])] = mask
        else:
            out[cid] = mask
    return out


@dataclass
class RunReport:
    config: AttackRunConfig
    stages: dict
    ledger: CallLedger
    rankings: dict
    curves: dict
    duplication: dict | None
    postfilter_outcome: PostfilterOutcome | None
    failures: dict
    dcs_scores: list[DcsScore]
    ecs_scores: list[EcsScore]
    labels: dict[int, VerbatimLabel]
    masks: dict[int, Mask]
    wall_clock_s: float

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_dcs_scores(out / "dcs_scores.jsonl", self.dcs_scores)
        if self.ecs_scores:
            write_ecs_scores(out / "ecs_scores.jsonl", self.ecs_scores)
        if self.labels:
            write_labels(out / "labels.jsonl", list(self.labels.values()))
        if self.masks:
            (out / "masks").mkdir(exist_ok=True)
            for mask_id, mask in sorted(mask_files_by_witness(self.labels, self.masks).items()):
                save_mask(mask, out / "masks" / f"{mask_id:06d}.png")
        body = {
            "format_version": REPORT_FORMAT_VERSION,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "config": self.config.as_dict(),
            "stages": self.stages,
            "ledger": self.ledger.as_dict(),
            "efficiency_ratio": CallLedger.efficiency_ratio(self.config.thresholds.j),
            "rankings": self.rankings,
            "curves": self.curves,
            "duplication": self.duplication,
            "postfilter": (
                {
                    "flagged_unmasked": list(self.postfilter_outcome.flagged_unmasked),
                    "flagged_masked": list(self.postfilter_outcome.flagged_masked),
                    "component_sizes": {
                        str(k): v for k, v in sorted(self.postfilter_outcome.component_sizes.items())
                    },
                }
                if self.postfilter_outcome is not None
                else None
            ),
            "failures": {stage: list(map(list, items)) for stage, items in self.failures.items()},
            "files": {
                "dcs_scores": "dcs_scores.jsonl",
                "ecs_scores": "ecs_scores.jsonl" if self.ecs_scores else None,
                "labels": "labels.jsonl" if self.labels else None,
            },
            "wall_clock_s": self.wall_clock_s,
        }
        (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return out / "report.json"


def load_report(run_dir) -> dict:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report.json in {run_dir}")
    try:
        body = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"corrupt report: {exc}") from exc
    if body.get("format_version") != REPORT_FORMAT_VERSION:
        raise ConfigError(f"unsupported report format_version {body.get('format_version')!r}")
    for key in ("config", "rankings", "ledger", "curves"):
        if key not in body:
            raise ConfigError(f"report missing required key {key!r}")
    return body


def recompute_curves(run_dir) -> dict:
    """Rebuild precision curves from the persisted ranking + labels JSONL."""
    body = load_report(run_dir)
    labels_file = Path(run_dir) / "labels.jsonl"
    if not labels_file.exists():
        raise ConfigError("report has no adjacent labels.jsonl; cannot recompute curves")
    labels = {l.caption_id: l for l in read_labels(labels_file)}
    out = {"main": evaluate_precision(body["rankings"]["main"], labels).as_lists()}
    out["per_kind"] = {
        kind: c.as_lists()
        for kind, c in per_kind_curves(body["rankings"]["main"], labels).items()
    }
    if "postfiltered" in body["rankings"]:
        out["postfiltered"] = evaluate_precision(body["rankings"]["postfiltered"], labels).as_lists()
    return out
