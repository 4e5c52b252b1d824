"""Exact call accounting per attack stage.

Every backend call in a run goes through a LedgeredBackend wrapper; a run
report without ledger data is invalid.  The efficiency ratio compares the
staged attack's one-step budget against a full-sampling baseline:
(baseline_gens * baseline_steps) / (j * 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from verbatim_audit.imaging import Image
from verbatim_audit.retrieval import CaptionRecord

BASELINE_GENERATIONS = 500
BASELINE_STEPS = 16


@dataclass
class StageCounts:
    generate_calls: int = 0
    timestep_sum: int = 0
    denoise_calls: int = 0

    def as_dict(self) -> dict:
        return {
            "generate_calls": self.generate_calls,
            "timestep_sum": self.timestep_sum,
            "denoise_calls": self.denoise_calls,
        }


@dataclass
class CallLedger:
    stages: dict[str, StageCounts] = field(default_factory=dict)

    def _stage(self, stage: str) -> StageCounts:
        return self.stages.setdefault(stage, StageCounts())

    def record_generate(self, stage: str, timesteps: int) -> None:
        counts = self._stage(stage)
        counts.generate_calls += 1
        counts.timestep_sum += timesteps

    def record_denoise(self, stage: str) -> None:
        self._stage(stage).denoise_calls += 1

    def totals(self) -> StageCounts:
        total = StageCounts()
        for counts in self.stages.values():
            total.generate_calls += counts.generate_calls
            total.timestep_sum += counts.timestep_sum
            total.denoise_calls += counts.denoise_calls
        return total

    def as_dict(self) -> dict:
        return {name: counts.as_dict() for name, counts in sorted(self.stages.items())}

    @staticmethod
    def efficiency_ratio(j: int, baseline_gens: int = BASELINE_GENERATIONS, baseline_steps: int = BASELINE_STEPS) -> float:
        """One-step attack cost advantage over a full-sampling baseline."""
        return (baseline_gens * baseline_steps) / (j * 1)


class LedgeredBackend:
    """Pass-through wrapper that counts every generate/denoise/dcs call.

    The active stage label is mutable; the pipeline switches it between
    phases.  Counting is the only added behavior.
    """

    def __init__(self, backend, ledger: CallLedger, stage: str = "default"):
        self._backend = backend
        self.ledger = ledger
        self.stage = stage

    @property
    def capabilities(self):
        return self._backend.capabilities

    @property
    def tensor_shape(self):
        return self._backend.tensor_shape

    def generate(self, caption: CaptionRecord, seed: int, timesteps: int | None = None) -> Image:
        effective = timesteps if timesteps is not None else self._backend.capabilities.default_timesteps
        img = self._backend.generate(caption, seed, timesteps)
        self.ledger.record_generate(self.stage, effective)
        return img

    def denoise(self, z: np.ndarray, caption: CaptionRecord) -> np.ndarray:
        out = self._backend.denoise(z, caption)
        self.ledger.record_denoise(self.stage)
        return out

    def dcs(self, caption: CaptionRecord, noise_seed: int, sigma: float) -> float:
        value = self._backend.dcs(caption, noise_seed, sigma)
        self.ledger.record_denoise(self.stage)
        return value
