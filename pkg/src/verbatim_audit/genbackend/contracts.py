"""Behavioral contracts every backend (simulated or remote) must honor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from verbatim_audit.imaging import Image
from verbatim_audit.retrieval import CaptionRecord


@dataclass(frozen=True)
class BackendCapabilities:
    model: str
    max_resolution: int
    supports_timesteps: bool
    default_timesteps: int
    sigma_max: float


@runtime_checkable
class GeneratorContract(Protocol):
    """Text-to-image generation, deterministic per (caption, seed, timesteps)."""

    capabilities: BackendCapabilities

    def generate(self, caption: CaptionRecord, seed: int, timesteps: int | None = None) -> Image:
        ...


@runtime_checkable
class DenoiserContract(Protocol):
    """Shape-preserving denoiser evaluation in the backend's tensor space."""

    tensor_shape: tuple[int, int, int]

    def denoise(self, z: np.ndarray, caption: CaptionRecord) -> np.ndarray:
        ...


@runtime_checkable
class EmbedderContract(Protocol):
    """Maps images into the unit-vector space of the retrieval index."""

    dimension: int

    def embed(self, img: Image) -> np.ndarray:
        ...


@runtime_checkable
class CorpusStore(Protocol):
    """Read-only access to reference images by item id."""

    def get_image(self, item_id: int) -> Image:
        ...

    def has_image(self, item_id: int) -> bool:
        ...
