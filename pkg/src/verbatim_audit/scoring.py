"""Per-caption memorization scores and their binary classifiers.

Whitebox: one denoiser evaluation on pure noise.  The score is the mean
squared residual between the noised input and the denoiser output — large
when the model jumps straight to a memorized picture, small when it only
nudges the noise.  The mean (not the sum) keeps one threshold meaningful
across tensor shapes and backends.

Blackbox: generate with a single timestep under several seeds, compute edge
maps, and count pixels whose edge vote clears a quorum.  Memorized prompts
come out sharp and stable; everything else is blur with no consistent edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from verbatim_audit import rng
from verbatim_audit.errors import InvalidScoreError, TransportError
from verbatim_audit.genbackend.contracts import DenoiserContract, GeneratorContract
from verbatim_audit.imaging import DEFAULT_EDGE_THRESHOLD, edge_map
from verbatim_audit.retrieval import CaptionRecord


@dataclass(frozen=True)
class DcsScore:
    caption_id: int
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value < 0:
            raise InvalidScoreError(f"dcs for caption {self.caption_id} is {self.value}")


@dataclass(frozen=True)
class EcsScore:
    caption_id: int
    value: int  # consistent-edge pixel count
    j_used: int


@dataclass(frozen=True)
class ScoreThresholds:
    tau_dcs: float = 1.0
    tau_ecs: int = 1
    gamma_frac: float = 0.75
    j: int = 4
    t_edge: float = DEFAULT_EDGE_THRESHOLD

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("j must be >= 1")
        if not 0.0 < self.gamma_frac <= 1.0:
            raise ValueError("gamma_frac must be in (0, 1]")
        if self.votes_needed() < 1:
            raise ValueError("gamma_frac * j must round to >= 1")

    def votes_needed(self) -> int:
        # Integer quorum; the epsilon absorbs float fuzz like 0.3 * 10 -> 3.0000000000000004.
        return max(1, math.ceil(self.gamma_frac * self.j - 1e-9))


def dcs_score(
    denoiser: DenoiserContract, caption: CaptionRecord, sigma1: float, noise_seed: int
) -> DcsScore:
    """Mean squared one-step denoising residual under seeded unit-Gaussian noise."""
    if sigma1 <= 0:
        raise ValueError(f"sigma1 must be > 0, got {sigma1}")
    shape = denoiser.tensor_shape
    eps = rng.normals(noise_seed, int(np.prod(shape))).reshape(shape)
    z = sigma1 * eps
    try:
        denoised = denoiser.denoise(z, caption)
    except (TransportError, ValueError):
        raise
    except Exception as exc:  # backend adapters may raise their own types
        raise TransportError(f"denoiser failed for caption {caption.id}: {exc}") from exc
    residual = z - denoised
    value = float(np.mean(residual * residual))
    if not math.isfinite(value):
        raise InvalidScoreError(f"non-finite residual for caption {caption.id}")
    return DcsScore(caption_id=caption.id, value=value)


def dcs_classify(s: DcsScore, tau_dcs: float, higher_is_verbatim: bool = True) -> bool:
    """Inclusive threshold; high residual flags a verbatim candidate.

    higher_is_verbatim is an escape hatch for backends whose score direction
    is inverted; the default matches the one-step memorization behavior.
    """
    if higher_is_verbatim:
        return s.value >= tau_dcs
    return s.value <= tau_dcs


def ecs_score(
    gen: GeneratorContract,
    caption: CaptionRecord,
    thresholds: ScoreThresholds,
    seeds: list[int],
) -> EcsScore:
    """Count pixels voted an edge by at least the quorum of one-step generations."""
    if len(seeds) != thresholds.j:
        raise ValueError(f"expected {thresholds.j} seeds, got {len(seeds)}")
    votes: np.ndarray | None = None
    for seed in seeds:
        img = gen.generate(caption, seed, timesteps=1)
        bits = edge_map(img, thresholds.t_edge).bits
        if votes is None:
            votes = bits.astype(np.int32)
        elif bits.shape != votes.shape:
            raise ValueError(f"resolution changed across seeds for caption {caption.id}")
        else:
            votes += bits
    assert votes is not None
    value = int((votes >= thresholds.votes_needed()).sum())
    return EcsScore(caption_id=caption.id, value=value, j_used=thresholds.j)


def ecs_classify(s: EcsScore, tau_ecs: int) -> bool:
    return s.value >= tau_ecs


# ---------------------------------------------------------------------------
# Score dumps (JSONL, one record per caption)
# ---------------------------------------------------------------------------


def write_dcs_scores(path, scores: list[DcsScore]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sorted(scores, key=lambda s: s.caption_id):
            f.write(json.dumps({"caption_id": s.caption_id, "dcs": s.value}) + "\n")


def write_ecs_scores(path, scores: list[EcsScore]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sorted(scores, key=lambda s: s.caption_id):
            f.write(json.dumps({"caption_id": s.caption_id, "ecs": s.value, "j": s.j_used}) + "\n")


def read_score_dump(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
