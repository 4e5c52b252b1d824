"""Simulated memorizing generator and its synthetic reference corpus.

The simulated world contains four caption classes:

  exact      families sharing one prompt and one stored image; generation
             returns the stored image for every seed and timestep count.
  template   families of near-duplicate stored images that differ only in a
             fixed rectangle; generation returns the family base with the
             rectangle filled by a seed-keyed flat color.
  retrieval  captions whose generation is a stored image that sits in the
             corpus under a different item, while the caption's own paired
             image is a shifted crop of it.
  non        everything else: one-step generation yields a heavily blurred
             noise field (no edges at the default threshold), full synthesis
             yields a smooth seed-keyed wave pattern.

Color calibration solves, at construction time, for the gap between stored
variant colors and generated variant colors such that the unmasked distance
of any template generation to any stored variant exceeds the verbatim
threshold by a configured margin, while the masked distance is zero.
"""

from __future__ import annotations

import dataclasses
import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from verbatim_audit import rng
from verbatim_audit.errors import ConfigError, UnknownCaptionError
from verbatim_audit.genbackend.contracts import BackendCapabilities
from verbatim_audit.imaging import (
    DEFAULT_EDGE_THRESHOLD,
    Image,
    gaussian_blur,
    load_image,
    save_image,
    sobel_magnitude,
)
from verbatim_audit.retrieval import CaptionRecord, write_captions, write_embeddings

SIGMA_MAX = 14.6
DEFAULT_TIMESTEPS = 16

KIND_EXACT = "exact"
KIND_TEMPLATE = "template"
KIND_RETRIEVAL = "retrieval"
KIND_NON = "non"

# Sub-stream tags under TAG_SIM_CONTENT.
_T_PERM = 1
_T_EXACT_IMG = 2
_T_TEMPLATE_IMG = 3
_T_RV_IMG = 4
_T_NON_IMG = 5
_T_ONESTEP = 6
_T_FULLT = 7
_T_SEEDCOLOR = 8
_T_EMB_JITTER = 9
_T_DENOISE_FIELD = 10


@dataclass(frozen=True)
class SimulationConfig:
    corpus_size: int = 5000
    exact_fraction: float = 0.01
    template_fraction: float = 0.006
    retrieval_fraction: float = 0.0
    exact_family_size: int = 5
    template_family_size: int = 5
    background_dup_fraction: float = 0.1
    background_family_size: int = 4
    resolution: int = 64
    variation_rect: tuple[int, int, int, int] | None = None  # (y0, x0, y1, x1)
    delta_v: float = 0.12
    calibration_margin: float = 1.5
    one_step_blur_sigma: float = 7.0
    noise_seed: int = 0
    dedup_exact: bool = False  # model variant whose training set dropped exact/retrieval plants

    def __post_init__(self) -> None:
        if self.corpus_size < 1:
            raise ConfigError("corpus_size must be >= 1")
        fractions = (self.exact_fraction, self.template_fraction, self.retrieval_fraction)
        if any(f < 0 or f > 1 for f in fractions) or sum(fractions) > 1:
            raise ConfigError("plant fractions must be in [0, 1] and sum to <= 1")
        if self.resolution < 16:
            raise ConfigError("resolution must be >= 16")
        if self.template_family_size < 3:
            raise ConfigError("template families need >= 3 members for mask estimation")
        if self.one_step_blur_sigma <= 0:
            raise ConfigError("one_step_blur_sigma must be > 0")

    def rect(self) -> tuple[int, int, int, int]:
        if self.variation_rect is not None:
            y0, x0, y1, x1 = self.variation_rect
            if not (0 <= y0 < y1 <= self.resolution and 0 <= x0 < x1 <= self.resolution):
                raise ConfigError(f"variation_rect {self.variation_rect} outside {self.resolution}px image")
            return self.variation_rect
        side = max(4, round(0.375 * self.resolution))
        y1 = x1 = self.resolution - max(2, self.resolution // 16)
        return (y1 - side, x1 - side, y1, x1)

    def rect_area_fraction(self) -> float:
        y0, x0, y1, x1 = self.rect()
        return ((y1 - y0) * (x1 - x0)) / (self.resolution * self.resolution)

    def color_ranges(self) -> tuple[float, float]:
        """(stored-variant luma ceiling, generated-variant luma floor).

        Solved so that sqrt(rect_fraction) * gap >= delta_v * margin: any
        generated template sits at least margin * delta_v away (unmasked RMSE)
        from every stored variant.
        """
        gap = self.delta_v * self.calibration_margin / np.sqrt(self.rect_area_fraction())
        if gap >= 0.92:
            raise ConfigError(
                f"variation rect too small to calibrate: required color gap {gap:.3f} >= 0.92"
            )
        lo_high = (1.0 - gap) / 2.0
        hi_low = (1.0 + gap) / 2.0
        return lo_high, hi_low

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["variation_rect"] is not None:
            d["variation_rect"] = list(d["variation_rect"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "SimulationConfig":
        if d.get("variation_rect") is not None:
            d = dict(d)
            d["variation_rect"] = tuple(d["variation_rect"])
        return SimulationConfig(**d)


def _key(cfg: SimulationConfig, *parts: int) -> int:
    return rng.derive_seed(cfg.noise_seed, rng.TAG_SIM_CONTENT, *parts)


def make_structured_image(key: int, resolution: int) -> np.ndarray:
    """Procedural sharp image: gradient background, rectangles, disks, stripes."""
    res = resolution
    u = rng.uniforms(key, 96)
    yy, xx = np.mgrid[0:res, 0:res] / (res - 1)
    arr = np.empty((res, res, 3))
    for c in range(3):
        c0 = 0.15 + 0.6 * u[c]
        c1 = 0.15 + 0.6 * u[3 + c]
        arr[:, :, c] = c0 + (c1 - c0) * (u[6] * yy + (1 - u[6]) * xx)
    n_rect = 3 + int(u[7] * 5)
    for r in range(n_rect):
        base = 8 + 7 * r
        y0 = int(u[base] * (res - 8))
        x0 = int(u[base + 1] * (res - 8))
        h = res // 8 + int(u[base + 2] * (res // 2))
        w = res // 8 + int(u[base + 3] * (res // 2))
        color = 0.06 + 0.84 * u[base + 4 : base + 7][:3]
        arr[y0 : min(res, y0 + h), x0 : min(res, x0 + w)] = color[np.newaxis, np.newaxis, :]
    pix_y, pix_x = np.mgrid[0:res, 0:res]
    n_disk = 1 + int(u[70] * 3)
    for d in range(n_disk):
        base = 71 + 6 * d
        cy = u[base] * res
        cx = u[base + 1] * res
        radius = res / 12 + u[base + 2] * res / 5
        color = 0.06 + 0.84 * u[base + 3 : base + 6][:3]
        inside = (pix_y - cy) ** 2 + (pix_x - cx) ** 2 <= radius * radius
        arr[inside] = color[np.newaxis, :]
    for s in range(2):
        base = 60 + 5 * s
        pos = int(u[base] * (res - 3))
        thickness = 1 + int(u[base + 1] * 2)
        color = 0.06 + 0.84 * u[base + 2]
        if u[base + 3] < 0.5:
            arr[pos : pos + thickness, :, :] = color
        else:
            arr[:, pos : pos + thickness, :] = color
    return np.clip(arr, 0.02, 0.98)


def _wave_image(key: int, resolution: int) -> np.ndarray:
    """Smooth, high-contrast wave field; strongly seed-dependent."""
    res = resolution
    u = rng.uniforms(key, 6)
    theta = np.pi * u[0]
    freq = (1.5 + 2.0 * u[1]) * 2.0 * np.pi / res
    phase = 2.0 * np.pi * u[2]
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64)
    carrier = freq * (np.cos(theta) * xx + np.sin(theta) * yy)
    arr = np.empty((res, res, 3))
    for c in range(3):
        arr[:, :, c] = 0.5 + 0.42 * np.sin(carrier + phase + 0.5 * c)
    return arr


def _blur_field(key: int, cfg: SimulationConfig) -> np.ndarray:
    res = cfg.resolution
    noise = rng.uniforms(key, res * res * 3).reshape(res, res, 3)
    return gaussian_blur(Image(noise), cfg.one_step_blur_sigma).data


class _LruImages:
    def __init__(self, capacity: int = 256):
        self._cap = capacity
        self._store: OrderedDict[int, np.ndarray] = OrderedDict()

    def get(self, key: int, maker) -> np.ndarray:
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        value = maker()
        self._store[key] = value
        if len(self._store) > self._cap:
            self._store.popitem(last=False)
        return value


class SimulationWorld:
    """Deterministic corpus + plant assignment + backends for one config."""

    def __init__(self, cfg: SimulationConfig):
        self.cfg = cfg
        n = cfg.corpus_size
        self.n_exact = round(n * cfg.exact_fraction)
        self.n_template = round(n * cfg.template_fraction)
        self.n_retrieval = round(n * cfg.retrieval_fraction)

        perm = np.argsort(rng.raw_values(_key(cfg, _T_PERM), n), kind="stable")
        cursor = 0
        self.exact_ids = [int(i) for i in perm[cursor : cursor + self.n_exact]]
        cursor += self.n_exact
        self.template_ids = [int(i) for i in perm[cursor : cursor + self.n_template]]
        cursor += self.n_template
        self.retrieval_ids = [int(i) for i in perm[cursor : cursor + self.n_retrieval]]
        cursor += self.n_retrieval
        # Retrieval plants each need a donor item that carries the memorized
        # image; donors come out of the remaining pool.
        self.rv_donor_ids = [int(i) for i in perm[cursor : cursor + self.n_retrieval]]
        cursor += self.n_retrieval
        rest = [int(i) for i in perm[cursor:]]
        n_bg = int(len(rest) * cfg.background_dup_fraction)
        n_bg -= n_bg % max(1, cfg.background_family_size)
        self.background_dup_ids = rest[:n_bg]
        self.plain_ids = rest[n_bg:]

        self._kind: dict[int, str] = {}
        self._family: dict[int, int] = {}
        self._member: dict[int, int] = {}
        # Remainders merge into the last family, so no family is undersized
        # (a template family below three members could not back a mask).
        n_exact_fams = max(1, self.n_exact // cfg.exact_family_size) if self.n_exact else 0
        for pos, cid in enumerate(self.exact_ids):
            fam = min(pos // cfg.exact_family_size, n_exact_fams - 1)
            self._kind[cid] = KIND_EXACT
            self._family[cid] = fam
            self._member[cid] = pos - fam * cfg.exact_family_size
        n_template_fams = max(1, self.n_template // cfg.template_family_size) if self.n_template else 0
        self._template_family_sizes: dict[int, int] = {}
        for pos, cid in enumerate(self.template_ids):
            fam = min(pos // cfg.template_family_size, n_template_fams - 1)
            self._kind[cid] = KIND_TEMPLATE
            self._family[cid] = fam
            self._template_family_sizes[fam] = self._template_family_sizes.get(fam, 0) + 1
            self._member[cid] = pos - fam * cfg.template_family_size
        for pos, cid in enumerate(self.retrieval_ids):
            self._kind[cid] = KIND_RETRIEVAL
            self._family[cid] = pos
            self._member[cid] = 0
        self._donor_of = dict(zip(self.retrieval_ids, self.rv_donor_ids))
        self._donor_family = {donor: pos for pos, donor in enumerate(self.rv_donor_ids)}
        for donor in self.rv_donor_ids:
            self._kind[donor] = KIND_NON
        for pos, cid in enumerate(self.background_dup_ids):
            self._kind[cid] = KIND_NON
            self._family[cid] = pos // cfg.background_family_size
            self._member[cid] = pos % cfg.background_family_size
        for cid in self.plain_ids:
            self._kind[cid] = KIND_NON

        self._lo_high, self._hi_low = cfg.color_ranges()
        self._cache = _LruImages()
        self._validate_template_variant_spread()

    # -- corpus ------------------------------------------------------------

    def kind_of(self, caption_id: int) -> str:
        try:
            return self._kind[caption_id]
        except KeyError:
            raise UnknownCaptionError(f"caption {caption_id} not in simulated corpus") from None

    def caption_text(self, caption_id: int) -> str:
        kind = self.kind_of(caption_id)
        if kind == KIND_EXACT:
            return f"studio catalog photo of display item {self._family[caption_id]:04d}"
        if kind == KIND_TEMPLATE:
            return (
                f"showroom floor set {self._family[caption_id]:04d}"
                f" colorway {self._member[caption_id]}"
            )
        if kind == KIND_RETRIEVAL:
            return f"archival gallery print {self._family[caption_id]:04d} full frame"
        return f"outdoor scene {caption_id:05d} at golden hour"

    def captions(self) -> list[CaptionRecord]:
        return [
            CaptionRecord(id=cid, text=self.caption_text(cid), image=f"images/{cid:06d}.png")
            for cid in range(self.cfg.corpus_size)
        ]

    def _variant_luma(self, member: int, family_size: int) -> float:
        return self._lo_high * (member + 0.5) / family_size

    def _template_variant_luma(self, caption_id: int) -> float:
        size = self._template_family_sizes[self._family[caption_id]]
        return self._variant_luma(self._member[caption_id], size)

    def _seed_color(self, caption_id: int, seed: int) -> np.ndarray:
        u = rng.uniforms(_key(self.cfg, _T_SEEDCOLOR, caption_id, seed), 3)
        return self._hi_low + u * (1.0 - self._hi_low)

    def _exact_image(self, family: int) -> np.ndarray:
        return self._cache.get(
            _key(self.cfg, _T_EXACT_IMG, family),
            lambda: make_structured_image(_key(self.cfg, _T_EXACT_IMG, family), self.cfg.resolution),
        )

    def _template_base(self, family: int) -> np.ndarray:
        return self._cache.get(
            _key(self.cfg, _T_TEMPLATE_IMG, family),
            lambda: make_structured_image(_key(self.cfg, _T_TEMPLATE_IMG, family), self.cfg.resolution),
        )

    def _rv_image(self, family: int) -> np.ndarray:
        return self._cache.get(
            _key(self.cfg, _T_RV_IMG, family),
            lambda: make_structured_image(_key(self.cfg, _T_RV_IMG, family), self.cfg.resolution),
        )

    def _fill_rect(self, base: np.ndarray, color) -> np.ndarray:
        y0, x0, y1, x1 = self.cfg.rect()
        out = base.copy()
        out[y0:y1, x0:x1, :] = color
        return out

    def reference_image(self, item_id: int) -> Image:
        """The corpus image paired with an item (unquantized floats)."""
        kind = self.kind_of(item_id)
        if kind == KIND_EXACT:
            return Image(self._exact_image(self._family[item_id]))
        if kind == KIND_TEMPLATE:
            luma = self._template_variant_luma(item_id)
            return Image(self._fill_rect(self._template_base(self._family[item_id]), luma))
        if kind == KIND_RETRIEVAL:
            shift = self.cfg.resolution // 8
            return Image(np.roll(self._rv_image(self._family[item_id]), (shift, shift), axis=(0, 1)))
        if item_id in self._donor_family:
            return Image(self._rv_image(self._donor_family[item_id]))
        if item_id in self._family:  # background duplicate family: shared image
            key = _key(self.cfg, _T_NON_IMG, 1_000_000 + self._family[item_id])
            return Image(make_structured_image(key, self.cfg.resolution))
        return Image(make_structured_image(_key(self.cfg, _T_NON_IMG, item_id), self.cfg.resolution))

    def variation_mask_bits(self) -> np.ndarray:
        """Ground-truth stable-region mask for template plants (1 = compared)."""
        res = self.cfg.resolution
        bits = np.ones((res, res), dtype=bool)
        y0, x0, y1, x1 = self.cfg.rect()
        bits[y0:y1, x0:x1] = False
        return bits

    def plant_manifest(self) -> dict:
        return {
            "exact": sorted(self.exact_ids),
            "template": sorted(self.template_ids),
            "retrieval": sorted(self.retrieval_ids),
            "retrieval_donors": sorted(self.rv_donor_ids),
        }

    # -- embeddings ----------------------------------------------------------

    def embedder(self) -> "SimEmbedder":
        return SimEmbedder(self.cfg.resolution)

    def embedding_of(self, item_id: int) -> np.ndarray:
        base = self.embedder().embed(self.reference_image(item_id))
        jitter = rng.normals(_key(self.cfg, _T_EMB_JITTER, item_id), base.shape[0])
        v = base + 1e-3 * jitter / np.linalg.norm(jitter)
        return v / np.linalg.norm(v)

    def all_embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.arange(self.cfg.corpus_size, dtype=np.uint64)
        vectors = np.stack([self.embedding_of(i) for i in range(self.cfg.corpus_size)])
        return ids, vectors

    # -- backends ------------------------------------------------------------

    def backend(self) -> "SimulatedBackend":
        return SimulatedBackend(self)

    def write(self, out_dir) -> None:
        """Materialize the corpus: captions, PNG images, embeddings, plants, config."""
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        write_captions(out / "captions.jsonl", self.captions())
        for cid in range(self.cfg.corpus_size):
            save_image(self.reference_image(cid), out / "images" / f"{cid:06d}.png")
        ids, vectors = self.all_embeddings()
        write_embeddings(out / "embeddings.emb1", ids, vectors)
        (out / "plants.json").write_text(json.dumps(self.plant_manifest(), indent=2) + "\n")
        (out / "simconfig.json").write_text(json.dumps(self.cfg.as_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def from_dir(path) -> "SimulationWorld":
        cfg = SimulationConfig.from_dict(json.loads((Path(path) / "simconfig.json").read_text()))
        return SimulationWorld(cfg)

    # -- calibration ----------------------------------------------------------

    def _validate_template_variant_spread(self) -> None:
        if not self.n_template:
            return
        worst = min(
            float(np.std([self._variant_luma(k, size) for k in range(size)]))
            for size in self._template_family_sizes.values()
        )
        if worst <= 0.055:
            raise ConfigError(
                f"stored template variants too close (luma std {worst:.3f}); "
                "raise the rect size or lower the calibration margin"
            )

    def check_one_step_blur(self, t_edge: float = DEFAULT_EDGE_THRESHOLD, probes: int = 16) -> float:
        """Worst Sobel magnitude over probe one-step fields; must clear t_edge."""
        worst = 0.0
        for p in range(probes):
            field = _blur_field(_key(self.cfg, _T_ONESTEP, 777_000 + p, p), self.cfg)
            worst = max(worst, float(sobel_magnitude(Image(field)).max()))
        if worst >= 0.8 * t_edge:
            raise ConfigError(
                f"one_step_blur_sigma={self.cfg.one_step_blur_sigma} leaves gradients "
                f"up to {worst:.3f}; raise it to keep one-step non-verbatims below {t_edge}"
            )
        return worst


class SimulatedBackend:
    """Generator + denoiser + native dcs over a SimulationWorld."""

    def __init__(self, world: SimulationWorld):
        self.world = world
        res = world.cfg.resolution
        self.tensor_shape = (res, res, 3)
        self.capabilities = BackendCapabilities(
            model="sim-memorizing" + ("-dedup" if world.cfg.dedup_exact else ""),
            max_resolution=res,
            supports_timesteps=True,
            default_timesteps=DEFAULT_TIMESTEPS,
            sigma_max=SIGMA_MAX,
        )

    def _memorized_kind(self, caption_id: int) -> str:
        """Effective class after optional training-set deduplication."""
        kind = self.world.kind_of(caption_id)
        if self.world.cfg.dedup_exact and kind in (KIND_EXACT, KIND_RETRIEVAL):
            return KIND_NON
        return kind

    def generate(self, caption: CaptionRecord, seed: int, timesteps: int | None = None) -> Image:
        cfg = self.world.cfg
        if timesteps is None:
            timesteps = self.capabilities.default_timesteps
        if timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        kind = self._memorized_kind(caption.id)
        if kind == KIND_EXACT:
            return Image(self.world._exact_image(self.world._family[caption.id]))
        if kind == KIND_RETRIEVAL:
            return Image(self.world._rv_image(self.world._family[caption.id]))
        if kind == KIND_TEMPLATE:
            base = self.world._template_base(self.world._family[caption.id])
            return Image(self.world._fill_rect(base, self.world._seed_color(caption.id, seed)))
        if timesteps == 1:
            return Image(_blur_field(_key(cfg, _T_ONESTEP, caption.id, seed), cfg))
        return Image(_wave_image(_key(cfg, _T_FULLT, caption.id, seed), cfg.resolution))

    def denoise(self, z: np.ndarray, caption: CaptionRecord) -> np.ndarray:
        if z.shape != self.tensor_shape:
            raise ValueError(f"tensor shape {z.shape} != {self.tensor_shape}")
        if not np.isfinite(z).all():
            raise ValueError("noised tensor contains non-finite values")
        kind = self._memorized_kind(caption.id)
        if kind == KIND_RETRIEVAL:
            # The memorized picture is the donor image, not the paired crop.
            return self.world._rv_image(self.world._family[caption.id])
        if kind != KIND_NON:
            return self.world.reference_image(caption.id).data
        field = _blur_field(_key(self.world.cfg, _T_DENOISE_FIELD, caption.id), self.world.cfg)
        return 0.7 * field + 0.3 * z

    def dcs(self, caption: CaptionRecord, noise_seed: int, sigma: float) -> float:
        from verbatim_audit.scoring import dcs_score

        return dcs_score(self, caption, sigma, noise_seed).value


def _block_pool(channel: np.ndarray, grid: int) -> np.ndarray:
    """Mean over a grid x grid partition, via an integral image."""
    h, w = channel.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = channel.cumsum(axis=0).cumsum(axis=1)
    re = np.round(np.linspace(0, h, grid + 1)).astype(int)
    ce = np.round(np.linspace(0, w, grid + 1)).astype(int)
    sums = (
        integral[np.ix_(re[1:], ce[1:])]
        - integral[np.ix_(re[:-1], ce[1:])]
        - integral[np.ix_(re[1:], ce[:-1])]
        + integral[np.ix_(re[:-1], ce[:-1])]
    )
    areas = np.outer(np.diff(re), np.diff(ce))
    return sums / areas


class SimEmbedder:
    """Block-pooled oriented-gradient features, mean-centered, unit-normalized.

    Stands in for a perceptual feature extractor: images sharing structure
    (near-duplicates, template variants with different fill colors) land near
    each other; unrelated compositions decorrelate.  Gradient features, not
    raw color, so a flat recolor of one region barely moves the embedding.
    """

    GRID = 12

    def __init__(self, resolution: int):
        self.resolution = resolution
        self.dimension = self.GRID * self.GRID * 2

    def embed(self, img: Image) -> np.ndarray:
        from scipy import ndimage

        from verbatim_audit.imaging import SOBEL_X, SOBEL_Y, to_grayscale

        luma = to_grayscale(img).data[:, :, 0]
        gx = np.abs(ndimage.correlate(luma, SOBEL_X, mode="nearest"))
        gy = np.abs(ndimage.correlate(luma, SOBEL_Y, mode="nearest"))
        feats = np.concatenate(
            [_block_pool(gx, self.GRID).ravel(), _block_pool(gy, self.GRID).ravel()]
        )
        feats = feats - feats.mean()
        norm = np.linalg.norm(feats)
        if norm < 1e-12:
            out = np.zeros(self.dimension)
            out[0] = 1.0
            return out
        return feats / norm


@dataclass
class DirectoryCorpusStore:
    """Reads reference images from the corpus directory written by write()."""

    root: Path
    paths: dict[int, str]

    def __post_init__(self):
        self._cache = _LruImages()

    @staticmethod
    def open(corpus_dir, records: list[CaptionRecord]) -> "DirectoryCorpusStore":
        return DirectoryCorpusStore(
            root=Path(corpus_dir),
            paths={r.id: r.image for r in records if r.image is not None},
        )

    def has_image(self, item_id: int) -> bool:
        return item_id in self.paths and (self.root / self.paths[item_id]).exists()

    def get_image(self, item_id: int) -> Image:
        if item_id not in self.paths:
            raise KeyError(f"item {item_id} has no reference image")
        path = self.root / self.paths[item_id]
        if not path.exists():
            raise FileNotFoundError(f"reference image missing from corpus store: {path}")
        data = self._cache.get(item_id, lambda: load_image(path).data)
        return Image(data)
