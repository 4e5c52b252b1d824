"""Simulated backend behaviors, call ledger arithmetic, and the wire loopback."""

import io

import numpy as np
import pytest

from verbatim_audit import rng
from verbatim_audit.errors import ConfigError, ProtocolError, TransportError, UnknownCaptionError
from verbatim_audit.genbackend import (
    CallLedger,
    LedgeredBackend,
    RemoteBackend,
    SimulationConfig,
    SimulationWorld,
)
from verbatim_audit.genbackend.server import SimBackendServer
from verbatim_audit.genbackend.simulation import DirectoryCorpusStore
from verbatim_audit.imaging import Mask, edge_map, load_image, masked_rmse, rmse, save_image
from verbatim_audit.retrieval import CaptionRecord, read_captions


# ---------------------------------------------------------------------------
# Simulated generation
# ---------------------------------------------------------------------------


def test_memorized_caption_identical_across_seeds_and_timesteps(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.exact_ids[0]]
    a = be.generate(rec, 1, timesteps=1)
    b = be.generate(rec, 999, timesteps=None)
    assert rmse(a, b) == 0.0
    assert rmse(a, small_world.reference_image(rec.id)) == 0.0


def test_template_caption_varies_only_inside_rect(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.template_ids[0]]
    mask = Mask(small_world.variation_mask_bits())
    a = be.generate(rec, 1, timesteps=1)
    b = be.generate(rec, 2, timesteps=1)
    assert masked_rmse(a, b, mask) == 0.0
    assert rmse(a, b) > 0.0


def test_template_generation_beats_calibration_distance(small_world, small_captions):
    # Every generated variant must sit further than margin * delta_v from
    # every stored variant when unmasked, and coincide outside the rect.
    be = small_world.backend()
    cfg = small_world.cfg
    mask = Mask(small_world.variation_mask_bits())
    floor = cfg.delta_v * cfg.calibration_margin
    for cid in small_world.template_ids[:6]:
        gen = be.generate(small_captions[cid], 7)
        for other in small_world.template_ids[:6]:
            if small_world._family[other] != small_world._family[cid]:
                continue
            stored = small_world.reference_image(other)
            assert rmse(gen, stored) >= floor
            assert masked_rmse(gen, stored, mask) == 0.0


def test_non_memorized_one_step_is_edge_free(small_world, small_captions):
    be = small_world.backend()
    for cid in small_world.plain_ids[:10]:
        for seed in (0, 1):
            img = be.generate(small_captions[cid], seed, timesteps=1)
            assert edge_map(img).set_count == 0


def test_non_memorized_full_synthesis_varies_by_seed(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.plain_ids[0]]
    a = be.generate(rec, 0)
    b = be.generate(rec, 1)
    assert rmse(a, b) > 0.12
    assert edge_map(a).set_count > 100  # full synthesis is sharp


def test_retrieval_plant_generation_matches_donor_not_pair(small_world, small_captions):
    be = small_world.backend()
    cid = small_world.retrieval_ids[0]
    donor = small_world.rv_donor_ids[0]
    gen = be.generate(small_captions[cid], 5)
    assert rmse(gen, small_world.reference_image(donor)) == 0.0
    assert rmse(gen, small_world.reference_image(cid)) > small_world.cfg.delta_v


def test_unknown_caption_rejected(small_world):
    be = small_world.backend()
    with pytest.raises(UnknownCaptionError):
        be.generate(CaptionRecord(id=10_000, text="nope"), 0)


def test_generation_is_deterministic(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.plain_ids[3]]
    a = be.generate(rec, 11, timesteps=1)
    b = be.generate(rec, 11, timesteps=1)
    np.testing.assert_array_equal(a.data, b.data)


def test_one_step_blur_calibration_check(small_world):
    assert small_world.check_one_step_blur() < 0.2
    bad = SimulationConfig(corpus_size=50, one_step_blur_sigma=1.0, noise_seed=1)
    with pytest.raises(ConfigError):
        SimulationWorld(bad).check_one_step_blur()


# ---------------------------------------------------------------------------
# Simulated denoiser
# ---------------------------------------------------------------------------


def test_denoise_memorized_ignores_input(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.exact_ids[0]]
    z1 = rng.normals(1, 64 * 64 * 3).reshape(be.tensor_shape)
    z2 = rng.normals(2, 64 * 64 * 3).reshape(be.tensor_shape)
    np.testing.assert_array_equal(be.denoise(z1, rec), be.denoise(z2, rec))


def test_denoise_non_memorized_tracks_input(small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.plain_ids[0]]
    z = 14.6 * rng.normals(3, 64 * 64 * 3).reshape(be.tensor_shape)
    out = be.denoise(z, rec)
    # 0.7 * field + 0.3 * z: removing the z part leaves the bounded field.
    field = out - 0.3 * z
    assert field.min() >= 0.0 and field.max() <= 0.7 + 1e-9


def test_denoise_rejects_non_finite(small_world, small_captions):
    be = small_world.backend()
    z = np.full(be.tensor_shape, np.nan)
    with pytest.raises(ValueError):
        be.denoise(z, small_captions[small_world.plain_ids[0]])


def test_dedup_variant_drops_exact_and_retrieval_keeps_template(small_captions):
    base_cfg = SimulationConfig(
        corpus_size=400, exact_fraction=0.05, template_fraction=0.05,
        retrieval_fraction=0.01, noise_seed=3,
    )
    import dataclasses
    dedup = SimulationWorld(dataclasses.replace(base_cfg, dedup_exact=True))
    be = dedup.backend()
    exact_rec = small_captions[dedup.exact_ids[0]]
    one_step = be.generate(exact_rec, 0, timesteps=1)
    assert edge_map(one_step).set_count == 0  # behaves like a non-verbatim now
    template_rec = small_captions[dedup.template_ids[0]]
    mask = Mask(dedup.variation_mask_bits())
    a = be.generate(template_rec, 1)
    b = be.generate(template_rec, 2)
    assert masked_rmse(a, b, mask) == 0.0  # still memorized


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


def test_corpus_write_is_deterministic(tmp_path):
    cfg = SimulationConfig(corpus_size=40, exact_fraction=0.1, template_fraction=0.1, noise_seed=9)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    SimulationWorld(cfg).write(d1)
    SimulationWorld(cfg).write(d2)
    for rel in ["captions.jsonl", "embeddings.emb1", "plants.json", "simconfig.json", "images/000000.png"]:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), rel


def test_corpus_store_round_trip(tmp_path, small_world):
    cfg = SimulationConfig(corpus_size=40, exact_fraction=0.1, template_fraction=0.1, noise_seed=9)
    world = SimulationWorld(cfg)
    world.write(tmp_path)
    records = read_captions(tmp_path / "captions.jsonl")
    store = DirectoryCorpusStore.open(tmp_path, records)
    assert store.has_image(0)
    img = store.get_image(0)
    # PNG quantization keeps the store within half a level of the float corpus.
    assert rmse(img, world.reference_image(0)) <= 0.5 / 255.0 + 1e-9
    assert not store.has_image(9999)
    with pytest.raises(KeyError):
        store.get_image(9999)


def test_world_rebuild_from_dir(tmp_path):
    cfg = SimulationConfig(corpus_size=40, exact_fraction=0.1, template_fraction=0.1, noise_seed=9)
    SimulationWorld(cfg).write(tmp_path)
    rebuilt = SimulationWorld.from_dir(tmp_path)
    assert rebuilt.cfg == cfg
    assert rebuilt.exact_ids == SimulationWorld(cfg).exact_ids


# ---------------------------------------------------------------------------
# Call ledger
# ---------------------------------------------------------------------------


def test_ledger_counts_and_ratio(small_world, small_captions):
    ledger = CallLedger()
    wrapped = LedgeredBackend(small_world.backend(), ledger, stage="blackbox")
    recs = [small_captions[c] for c in small_world.plain_ids[:100]]
    for rec in recs:
        for seed in range(4):
            wrapped.generate(rec, seed, timesteps=1)
    counts = ledger.stages["blackbox"]
    assert counts.generate_calls == 400
    assert counts.timestep_sum == 400
    assert counts.denoise_calls == 0
    assert CallLedger.efficiency_ratio(j=4) == 2000


def test_ledger_whitebox_counts(small_world, small_captions):
    ledger = CallLedger()
    wrapped = LedgeredBackend(small_world.backend(), ledger, stage="whitebox")
    for cid in small_world.plain_ids[:100]:
        wrapped.dcs(small_captions[cid], noise_seed=cid, sigma=14.6)
    counts = ledger.stages["whitebox"]
    assert counts.denoise_calls == 100
    assert counts.generate_calls == 0


def test_ledger_default_timesteps_accounted(small_world, small_captions):
    ledger = CallLedger()
    wrapped = LedgeredBackend(small_world.backend(), ledger, stage="post")
    wrapped.generate(small_captions[small_world.plain_ids[0]], 0, timesteps=None)
    assert ledger.stages["post"].timestep_sum == wrapped.capabilities.default_timesteps


# ---------------------------------------------------------------------------
# Wire protocol loopback
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def loopback(small_world):
    with SimBackendServer(small_world) as server:
        yield RemoteBackend(server.url, timeout_s=10)


def test_health_capabilities(loopback, small_world):
    caps = loopback.capabilities
    assert caps.sigma_max == 14.6
    assert caps.supports_timesteps is True
    assert caps.max_resolution == small_world.cfg.resolution


def test_remote_generate_matches_local_bytes(loopback, small_world, small_captions):
    be = small_world.backend()
    for cid in [small_world.exact_ids[0], small_world.plain_ids[0]]:
        rec = small_captions[cid]
        remote = loopback.generate(rec, 7, timesteps=1)
        local = be.generate(rec, 7, timesteps=1)
        buf = io.BytesIO()
        save_image(local, buf)
        buf.seek(0)
        np.testing.assert_array_equal(remote.data, load_image(buf).data)


def test_remote_repeat_seed_identical(loopback, small_captions, small_world):
    rec = small_captions[small_world.template_ids[0]]
    a = loopback.generate(rec, 3)
    b = loopback.generate(rec, 3)
    np.testing.assert_array_equal(a.data, b.data)


def test_remote_dcs_matches_local(loopback, small_world, small_captions):
    be = small_world.backend()
    rec = small_captions[small_world.exact_ids[1]]
    assert loopback.dcs(rec, noise_seed=42, sigma=14.6) == be.dcs(rec, noise_seed=42, sigma=14.6)


def test_remote_unknown_caption_is_protocol_error(loopback):
    with pytest.raises(ProtocolError):
        loopback.generate(CaptionRecord(id=0, text="not in corpus"), 0)


def test_remote_unsupported_resolution_is_protocol_error(loopback, small_captions, small_world):
    rec = small_captions[small_world.plain_ids[0]]
    with pytest.raises(ProtocolError):
        loopback.generate(rec, 0, width=32, height=32)


def test_remote_bad_sigma_is_protocol_error(loopback, small_captions, small_world):
    rec = small_captions[small_world.plain_ids[0]]
    with pytest.raises(ProtocolError):
        loopback.dcs(rec, noise_seed=1, sigma=0.0)


def test_down_backend_is_transport_error():
    with pytest.raises(TransportError):
        RemoteBackend("http://127.0.0.1:9", timeout_s=0.2, max_retries=1)
