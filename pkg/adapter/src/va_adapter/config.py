"""Adapter configuration."""

from __future__ import annotations

from dataclasses import dataclass


class AdapterError(Exception):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    """How the adapter loads and serves one model.

    model: "sim:<corpus dir>" for the reference test model, or
           "diffusers:<model id>" for a real pipeline (requires the torch extra).
    """

    model: str
    device: str = "cpu"
    resolution: int = 0  # 0: the model's native resolution
    guidance_scale: float = 1.0  # classifier-free guidance for one-step synthesis
    max_concurrent: int = 1  # in-flight generations per device
    queue_depth: int = 8  # waiting requests beyond which the server answers 503

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise AdapterError("max_concurrent must be >= 1")
        if self.queue_depth < 0:
            raise AdapterError("queue_depth must be >= 0")
        if ":" not in self.model:
            raise AdapterError(f"model must look like 'sim:<dir>' or 'diffusers:<id>', got {self.model!r}")
