import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpm_tse import audio, mixgen
from dpm_tse.mixgen import (CATEGORIES, CorpusConfig, EventSpec, ManifestError, make_mixture,
                            read_manifest, realized_snr, rms, sample_record, sample_seed, scale_to_snr,
                            synth_event, write_manifest)

SR = 16000


def test_registry_has_eight_categories():
    assert len(CATEGORIES) == 8
    assert set(CATEGORIES) == {"pure_tone", "harmonic_tone", "linear_chirp", "noise_burst", "am_tone",
                               "click_train", "gated_noise", "exp_sweep"}


def test_pure_tone_peak():
    x = synth_event(EventSpec("pure_tone", 1.0, params={"freq": 440.0}))
    spec = np.abs(np.fft.rfft(x))
    assert np.argmax(spec) * SR / x.size == pytest.approx(440.0, abs=1.0)


def test_duration_in_samples():
    assert synth_event(EventSpec("noise_burst", 0.3, seed=1)).size == 4800


@pytest.mark.parametrize("cat", CATEGORIES)
def test_every_category_is_deterministic_unit_peak(cat):
    spec = EventSpec(cat, 0.5, seed=3)
    a, b = synth_event(spec), synth_event(spec)
    assert a.tobytes() == b.tobytes()
    assert np.max(np.abs(a)) == pytest.approx(1.0, abs=1e-12)
    # 10 ms raised-cosine ramps start and end at zero
    assert a[0] == 0.0
    assert abs(a[-1]) < 0.01


def test_unknown_category():
    with pytest.raises(ValueError):
        synth_event(EventSpec("bagpipe", 1.0))


def test_event_spec_validation():
    with pytest.raises(ValueError):
        EventSpec("pure_tone", 2.0, onset=9.0).validate()
    with pytest.raises(ValueError):
        EventSpec("pure_tone", 0.1).validate()
    with pytest.raises(ValueError):
        EventSpec("pure_tone", 1.0, snr_db=11.0).validate()


@pytest.mark.parametrize("snr_db,gain", [(0.0, 1.0), (6.0206, 2.0), (-6.0206, 0.5)])
def test_scale_to_snr_examples(snr_db, gain):
    rng = np.random.default_rng(0)
    bg = rng.standard_normal(4000)
    fg = rng.standard_normal(4000)
    fg *= rms(bg) / rms(fg)
    assert scale_to_snr(fg, bg, snr_db, (0, 4000)) == pytest.approx(gain, rel=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 10), st.integers(0, 10000))
def test_scale_to_snr_realises_target(snr_db, seed):
    rng = np.random.default_rng(seed)
    bg, fg = rng.standard_normal((2, 3000))
    region = (500, 2500)
    g = scale_to_snr(fg, bg, snr_db, region)
    assert abs(realized_snr(g * fg, bg, region) - snr_db) < 0.01


def test_scale_to_snr_errors():
    with pytest.raises(ValueError):
        scale_to_snr(np.zeros(100), np.ones(100), 0.0, (0, 100))
    with pytest.raises(ValueError):
        scale_to_snr(np.ones(100), np.ones(100), 0.0, (50, 50))


def test_interferer_count_rule():
    with pytest.raises(ValueError):
        CorpusConfig(interferers=(0, 0))
    CorpusConfig(interferers=(0, 0), allow_clean=True)
    cfg = CorpusConfig()
    for i in range(30):
        s = make_mixture(cfg, i)
        assert 1 <= len(s.interferers) <= 3
        assert all(ev.category != s.target_category for ev in s.interferers)


def test_clean_mixture_allowed_when_asked():
    s = make_mixture(CorpusConfig(interferers=(0, 0), allow_clean=True), 4)
    assert s.interferers == []
    assert s.overlap_fraction == 0.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mixture_invariants(seed):
    s = make_mixture(CorpusConfig(), seed)
    assert s.mixture.size == 160000
    assert np.max(np.abs(s.mixture)) <= 1.0 + 1e-12
    # additivity: mixture minus background and interferers leaves the target stem
    rest = s.mixture - s.background - np.sum(s.event_stems[1:], axis=0)
    assert np.sqrt(np.mean((rest - s.target_stem) ** 2)) < 1e-6
    lo, hi = s.event_region(0)
    outside = np.ones(s.mixture.size, bool)
    outside[lo:hi] = False
    assert not np.any(s.target_stem[outside])
    for (want, got) in zip([e.snr_db for e in s.events], s.realized_snrs()):
        assert abs(want - got) < 0.1
    assert 0.0 <= s.overlap_fraction <= 1.0


def test_peak_normalisation_is_joint():
    # loud foregrounds over a loud background force the joint rescale
    cfg = CorpusConfig(background_level=0.5, snr_range=(9.0, 10.0))
    s = make_mixture(cfg, 2)
    assert s.peak_scale < 1.0
    assert np.max(np.abs(s.mixture)) == pytest.approx(1.0, abs=1e-12)
    for want, got in zip([e.snr_db for e in s.events], s.realized_snrs()):
        assert abs(want - got) < 1e-9


def test_target_aligned_with_mixture():
    s = make_mixture(CorpusConfig(), 11)
    n = s.mixture.size
    spec = np.fft.rfft(s.mixture, 2 * n) * np.conj(np.fft.rfft(s.target_stem, 2 * n))
    xc = np.fft.irfft(spec)
    lags = np.concatenate([np.arange(n), np.arange(-n, 0)])
    assert lags[np.argmax(xc)] == 0


def test_same_seed_same_bytes(tmp_path):
    a = make_mixture(CorpusConfig(), 99)
    b = make_mixture(CorpusConfig(), 99)
    audio.write_wav(tmp_path / "a.wav", a.mixture)
    audio.write_wav(tmp_path / "b.wav", b.mixture)
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_sample_seeds_are_split_specific():
    seeds = {sample_seed(0, split, i) for split in ("train", "valid", "test") for i in range(50)}
    assert len(seeds) == 150
    assert sample_seed(0, "train", 3) == sample_seed(0, "train", 3)
    assert sample_seed(0, "train", 3) != sample_seed(1, "train", 3)


def test_infeasible_config():
    with pytest.raises(ValueError):
        CorpusConfig(duration_range=(0.3, 12.0))
    with pytest.raises(ValueError):
        make_mixture(CorpusConfig(), 0, target_category="bagpipe")


# -- manifest ------------------------------------------------------------


def test_manifest_empty(tmp_path):
    write_manifest([], tmp_path / "m.jsonl")
    assert (tmp_path / "m.jsonl").read_text() == ""
    assert read_manifest(tmp_path / "m.jsonl") == []


def test_manifest_round_trip(tmp_path):
    cfg = CorpusConfig()
    records = []
    for i in range(100):
        s = make_mixture(cfg, sample_seed(0, "train", i))
        records.append(sample_record(s, f"{i:05d}", "train", f"train/mixture/{i:05d}.wav",
                                     f"train/target/{i:05d}.wav", {"log_min": -11.5, "log_max": 4.0},
                                     "abc"))
    write_manifest(records, tmp_path / "m.jsonl")
    assert len((tmp_path / "m.jsonl").read_text().splitlines()) == 100
    back = read_manifest(tmp_path / "m.jsonl")
    assert back == json.loads(json.dumps(records))
    for rec, orig in zip(back, records):
        assert set(rec) == set(orig)
        assert rec["events"][0]["snr_db"] == orig["events"][0]["snr_db"]


def test_manifest_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "m.jsonl"
    good = {"version": 1, "id": "0", "split": "test", "mixture": "a", "target": "b",
            "target_category": "pure_tone", "regions": []}
    p.write_text(json.dumps(good) + "\n{not json\n")
    with pytest.raises(ManifestError, match="line 2"):
        read_manifest(p)
    p.write_text(json.dumps({"version": 1}) + "\n")
    with pytest.raises(ManifestError, match="line 1"):
        read_manifest(p)
    p.write_text(json.dumps({**good, "version": 7}) + "\n")
    with pytest.raises(ManifestError, match="version"):
        read_manifest(p)


def test_generated_corpus_on_disk(tmp_path):
    cfg = CorpusConfig(n_train=3, n_valid=1, n_test=2, seed=5)
    mixgen.generate_corpus(cfg, tmp_path, config_hash="h")
    for split, n in cfg.split_sizes().items():
        recs = read_manifest(tmp_path / split / "manifest.jsonl")
        assert len(recs) == n
        for rec in recs:
            assert mixgen.resolve(rec, "mixture", tmp_path).exists()
            assert rec["norm"]["log_max"] > rec["norm"]["log_min"]
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["config_hash"] == "h"
    # the stored target stem still meets its SNR against the rebuilt background
    rec = read_manifest(tmp_path / "test" / "manifest.jsonl")[0]
    tgt, _ = audio.read_wav(mixgen.resolve(rec, "target", tmp_path))
    bg = mixgen.background_noise(160000, SR, np.random.default_rng(rec["background_seed"]),
                                 cfg.background_level) * rec["peak_scale"]
    ev = rec["events"][0]
    lo = int(round(ev["onset"] * SR))
    hi = lo + int(round(ev["duration"] * SR))
    assert abs(realized_snr(tgt, bg, (lo, hi)) - ev["snr_db"]) < 0.1
