"""Model backends the adapter can serve.

Every backend produces float rasters in [0, 1] and computes the one-step
denoising residual server-side, so latents never cross the wire.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from va_adapter.config import AdapterConfig, AdapterError


@dataclass(frozen=True)
class ModelInfo:
    name: str
    resolution: int
    supports_timesteps: bool
    default_timesteps: int
    sigma_max: float
    dcs_space: str  # "pixel" or "latent"


class ModelBackend(Protocol):
    info: ModelInfo

    def generate(self, text: str, seed: int, timesteps: int) -> np.ndarray:
        """(h, w, 3) float64 raster in [0, 1]; deterministic per (text, seed, timesteps)."""
        ...

    def denoise_residual(self, text: str, noise_seed: int, sigma: float) -> float:
        """Mean squared residual between seeded noise and one denoiser pass."""
        ...


class UnknownPromptError(KeyError):
    pass


class ReferenceSimModel:
    """The reference fake model shipped for tests: a simulated memorizing
    corpus served as if it were a real pipeline."""

    def __init__(self, corpus_dir: str):
        from verbatim_audit.genbackend.simulation import SimulationWorld
        from verbatim_audit.retrieval import CaptionRecord

        self._record_cls = CaptionRecord
        world = SimulationWorld.from_dir(corpus_dir)
        self._backend = world.backend()
        self._text_to_id: dict[str, int] = {}
        for rec in world.captions():
            self._text_to_id.setdefault(rec.text, rec.id)
        caps = self._backend.capabilities
        self.info = ModelInfo(
            name=caps.model,
            resolution=caps.max_resolution,
            supports_timesteps=caps.supports_timesteps,
            default_timesteps=caps.default_timesteps,
            sigma_max=caps.sigma_max,
            dcs_space="pixel",
        )

    def _record(self, text: str):
        if text not in self._text_to_id:
            raise UnknownPromptError(f"prompt not in the reference corpus: {text[:60]!r}")
        return self._record_cls(id=self._text_to_id[text], text=text)

    def generate(self, text: str, seed: int, timesteps: int) -> np.ndarray:
        return self._backend.generate(self._record(text), seed, timesteps).data

    def denoise_residual(self, text: str, noise_seed: int, sigma: float) -> float:
        return self._backend.dcs(self._record(text), noise_seed, sigma)


class DiffusersModel:
    """Latent-diffusion pipeline behind the same surface.

    Requires the `torch` extra (torch + diffusers) and downloadable weights;
    construction fails with a clear message otherwise.  The denoising
    residual is computed in latent space with a single UNet evaluation at the
    scheduler's requested noise level, using the epsilon-prediction
    convention x0 = z - sigma * eps.
    """

    def __init__(self, model_id: str, cfg: AdapterConfig):
        try:
            import torch
            from diffusers import HeunDiscreteScheduler, StableDiffusionPipeline
        except ImportError as exc:
            raise AdapterError(
                "model 'diffusers:...' needs the torch extra: pip install 'va-diffusion-adapter[torch]'"
            ) from exc

        self._torch = torch
        self._device = cfg.device
        self._guidance = cfg.guidance_scale
        pipe = StableDiffusionPipeline.from_pretrained(model_id)
        pipe.scheduler = HeunDiscreteScheduler.from_config(pipe.scheduler.config)
        pipe = pipe.to(cfg.device)
        pipe.set_progress_bar_config(disable=True)
        self._pipe = pipe
        resolution = cfg.resolution or pipe.unet.config.sample_size * pipe.vae_scale_factor
        self._latent_side = resolution // pipe.vae_scale_factor
        sigma_max = float(pipe.scheduler.init_noise_sigma)
        self.info = ModelInfo(
            name=model_id,
            resolution=resolution,
            supports_timesteps=True,
            default_timesteps=16,
            sigma_max=sigma_max,
            dcs_space="latent",
        )

    def generate(self, text: str, seed: int, timesteps: int) -> np.ndarray:
        torch = self._torch
        generator = torch.Generator(device=self._device).manual_seed(seed % (2**63))
        with torch.no_grad():
            out = self._pipe(
                prompt=text,
                num_inference_steps=timesteps,
                guidance_scale=self._guidance,
                generator=generator,
                height=self.info.resolution,
                width=self.info.resolution,
                output_type="np",
            )
        return np.clip(out.images[0].astype(np.float64), 0.0, 1.0)

    def denoise_residual(self, text: str, noise_seed: int, sigma: float) -> float:
        torch = self._torch
        pipe = self._pipe
        with torch.no_grad():
            embeddings, _ = pipe.encode_prompt(
                text, self._device, num_images_per_prompt=1, do_classifier_free_guidance=False
            )
            generator = torch.Generator(device=self._device).manual_seed(noise_seed % (2**63))
            shape = (1, pipe.unet.config.in_channels, self._latent_side, self._latent_side)
            eps = torch.randn(shape, generator=generator, device=self._device)
            z = sigma * eps
            pipe.scheduler.set_timesteps(1, device=self._device)
            t = pipe.scheduler.timesteps[0]
            scaled = pipe.scheduler.scale_model_input(z, t)
            eps_pred = pipe.unet(scaled, t, encoder_hidden_states=embeddings).sample
            denoised = z - sigma * eps_pred
            value = float(torch.mean((z - denoised) ** 2))
        if not math.isfinite(value):
            raise ValueError("non-finite denoising residual")
        return value


def create_model(cfg: AdapterConfig) -> ModelBackend:
    scheme, _, rest = cfg.model.partition(":")
    if scheme == "sim":
        return ReferenceSimModel(rest)
    if scheme == "diffusers":
        return DiffusersModel(rest, cfg)
    raise AdapterError(f"unknown model scheme {scheme!r} (expected sim: or diffusers:)")
