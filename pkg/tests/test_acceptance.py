"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. The ablation
(criteria 6 and 7) trains two denoisers and takes a few minutes on one core.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest

from dpm_tse import audio, cli, diffusion, evaluate, mixgen
from dpm_tse.denoiser import GaussianOracle, PARAM_NAMES, init_params, loss_and_gradients
from dpm_tse.estimators import TargetSoundExtractor
from dpm_tse.schedule import (build_linear_schedule, plan_inference_steps, rescale_zero_terminal_snr,
                              snr)

DEFAULT = build_linear_schedule(1000, 1e-4, 0.02)
CORRECTED = rescale_zero_terminal_snr(DEFAULT)
SR = 16000


def test_c01_zero_terminal_snr(verdict):
    first_gap = abs(CORRECTED.sqrt_alpha_bars[0] - DEFAULT.sqrt_alpha_bars[0])
    ok = snr(CORRECTED, 1000) == 0.0 and first_gap <= 1e-12 and snr(DEFAULT, 1000) > 0
    verdict(1, "zero terminal SNR", ok,
            f"corrected SNR(T)={snr(CORRECTED, 1000)!r}, default SNR(T)={snr(DEFAULT, 1000):.3e}, "
            f"|d sqrt(abar_1)|={first_gap:.1e}")
    assert ok


def test_c02_algebraic_identities(verdict):
    rng = np.random.default_rng(2024)
    n, d = 10_000, 16
    worst = 0.0
    for sched in (CORRECTED, DEFAULT):
        x0 = rng.standard_normal((n, d))
        eps = rng.standard_normal((n, d))
        t = rng.integers(1, sched.T + 1, n)
        t[:2] = (1, sched.T)
        x_t = diffusion.forward_sample(x0, t, eps, sched)
        v = diffusion.v_target(x0, eps, t, sched)
        err_x0 = np.linalg.norm(diffusion.x0_from_v(v, x_t, t, sched) - x0, axis=1) / np.linalg.norm(x0, axis=1)
        err_eps = np.linalg.norm(diffusion.eps_from_v(v, x_t, t, sched) - eps, axis=1) / np.linalg.norm(eps, axis=1)
        worst = max(worst, err_x0.max(), err_eps.max())

    # x0-form posterior mean against the eps-form mean at every step with abar_t > 0
    worst_mean = 0.0
    x0 = rng.standard_normal(d)
    eps = rng.standard_normal(d)
    for sched in (CORRECTED, DEFAULT):
        for t in range(1, sched.T + 1):
            if sched.alpha_bar(t) <= 0:
                continue
            x_t = diffusion.forward_sample(x0, t, eps, sched)
            via_x0 = diffusion.posterior_stats(x0, x_t, t, t - 1, sched).mean
            via_eps = (x_t - sched.beta(t) / math.sqrt(1 - sched.alpha_bar(t)) * eps) / math.sqrt(sched.alpha(t))
            rel = np.linalg.norm(via_x0 - via_eps) / max(np.linalg.norm(via_eps), 1e-300)
            worst_mean = max(worst_mean, rel)
    ok = worst <= 1e-6 and worst_mean <= 1e-6
    verdict(2, "algebraic identities", ok,
            f"20000 triples, max round-trip rel err {worst:.1e}; max mean rel err {worst_mean:.1e}")
    assert ok


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 1000))
def test_c03_terminal_step_property(seed, steps):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(6)
    eps = rng.standard_normal(6)
    T = CORRECTED.T
    np.testing.assert_array_equal(diffusion.v_target(x0, eps, T, CORRECTED), -x0)
    t_hi, t_lo = plan_inference_steps(CORRECTED, steps).transitions()[0]
    assert t_hi == T
    assert diffusion.posterior_coefficients(t_hi, t_lo, CORRECTED)[1] == 0.0
    x_t = diffusion.forward_sample(x0, T, eps, CORRECTED)
    mean = diffusion.posterior_stats(x0, x_t, t_hi, t_lo, CORRECTED).mean
    np.testing.assert_array_equal(mean, diffusion.posterior_stats(x0, 5 * x_t + 1, t_hi, t_lo, CORRECTED).mean)


def test_c03_terminal_step_semantics(verdict):
    # the property test above already ran; this records the verdict line
    x0 = np.linspace(-1, 1, 9)
    v_ok = np.array_equal(diffusion.v_target(x0, np.ones(9), 1000, CORRECTED), -x0)
    coefs = [diffusion.posterior_coefficients(*plan_inference_steps(CORRECTED, s).transitions()[0], CORRECTED)[1]
             for s in range(1, 1001)]
    ok = v_ok and all(c == 0.0 for c in coefs)
    verdict(3, "terminal-step semantics", ok, "v_target == -x0 and first-step x_t coefficient == 0 for 1..1000 steps")
    assert ok


def test_c04_sampler_oracle_convergence(verdict):
    N, d, mu, sigma, reps = 5000, 8, 0.5, 1.0, 100
    plan = plan_inference_steps(CORRECTED, 50)
    oracle = GaussianOracle(CORRECTED, mu, sigma)
    passed = 0
    t0 = time.perf_counter()
    for seed in range(reps):
        x = diffusion.sample(oracle, np.zeros((N, d)), 0, plan, CORRECTED, seed=seed, clamp=None)
        mean_ok = np.all(np.abs(x.mean(axis=0) - mu) <= 4 * sigma / math.sqrt(N))
        var_ok = np.all(np.abs(x.var(axis=0, ddof=1) - sigma**2) <= 0.1 * sigma**2)
        passed += bool(mean_ok and var_ok)
    ok = passed >= 99
    verdict(4, "sampler-oracle convergence", ok, f"{passed}/{reps} repetitions pass, {time.perf_counter() - t0:.1f}s")
    assert ok


def test_c05_gradient_correctness(verdict):
    p = init_params(3, 2, 4, hidden=6, emb_dim=4, seed=5)
    rng = np.random.default_rng(6)
    # random output layer so upstream gradients are nonzero
    p["W3"] = rng.standard_normal(p["W3"].shape) * 0.5
    p["b3"] = rng.standard_normal(p["b3"].shape) * 0.1
    n = 6
    x0 = rng.uniform(-1, 1, (n, 2, 4))
    m = rng.uniform(-1, 1, (n, 2, 4))
    c = np.array([0, 1, 2, 0, 1, 2])
    t = rng.integers(1, 1001, n)
    eps = rng.standard_normal(x0.shape)
    _, grads = loss_and_gradients(p, x0, m, c, CORRECTED, t=t, eps=eps)
    sizes = np.array([p[k].size for k in PARAM_NAMES])
    picks = rng.choice(sizes.sum(), 80, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    h, worst = 1e-4, 0.0
    for flat_idx in picks:
        g = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name, idx = PARAM_NAMES[g], int(flat_idx - offsets[g])
        flat = p[name].reshape(-1)
        old = flat[idx]
        flat[idx] = old + h
        up, _ = loss_and_gradients(p, x0, m, c, CORRECTED, t=t, eps=eps)
        flat[idx] = old - h
        down, _ = loss_and_gradients(p, x0, m, c, CORRECTED, t=t, eps=eps)
        flat[idx] = old
        fd = (up - down) / (2 * h)
        an = grads[name].reshape(-1)[idx]
        worst = max(worst, abs(fd - an) / max(abs(fd) + abs(an), 1e-10))
    ok = worst < 1e-4
    verdict(5, "gradient correctness", ok, f"{len(picks)} parameters, max rel err {worst:.1e}")
    assert ok


# -- ablation (criteria 6 and 7) -----------------------------------------


@pytest.fixture(scope="module")
def ablation():
    cfg = mixgen.CorpusConfig()
    train = [mixgen.make_mixture(cfg, mixgen.sample_seed(0, "train", i)) for i in range(256)]
    test = [mixgen.make_mixture(cfg, mixgen.sample_seed(0, "test", i)) for i in range(64)]
    mel = audio.MelConfig()
    mel = mel.with_stats(mel.log_min, max(audio.log_mel_raw(s.mixture, mel).max() for s in train))

    def grids(samples):
        return (np.stack([audio.log_mel(s.mixture, mel).values for s in samples]),
                np.stack([audio.log_mel(s.target_stem, mel).values for s in samples]),
                np.array([mixgen.CATEGORIES.index(s.target_category) for s in samples]))

    X, y, c = grids(train)
    Xte, yte, cte = grids(test)
    n_frames = audio.n_frames_for(int(cfg.canvas_seconds * SR), mel.hop)
    masks = [evaluate.region_mask(s.regions, Xte.shape[1], original_frames=n_frames) for s in test]
    baseline = np.array([evaluate.extraction_score(x, r, mk) for x, r, mk in zip(Xte, yte, masks)])
    out = {"baseline": baseline}
    for corrected in (True, False):
        est = TargetSoundExtractor(zero_terminal_snr=corrected, learning_rate=1e-3, epochs=20,
                                   dtype="float32", random_state=0)
        est.fit(X, y, c)
        pred = est.predict(Xte, cte)
        out[corrected] = {
            "purity": np.array([evaluate.purity_score(p, mk) for p, mk in zip(pred, masks)]),
            "extraction": np.array([evaluate.extraction_score(p, r, mk) for p, r, mk in zip(pred, yte, masks)]),
        }
    return out


@pytest.mark.slow
def test_c06_ablation_direction(ablation, verdict):
    corr, dflt = ablation[True]["purity"], ablation[False]["purity"]
    wins, ties = int(np.sum(corr < dflt)), int(np.sum(corr == dflt))
    trials = len(corr) - ties
    p = binomtest(wins, trials, alternative="greater").pvalue
    ok = corr.mean() < dflt.mean() and p < 0.05
    verdict(6, "ablation direction", ok,
            f"purity corrected {corr.mean():.4f} vs default {dflt.mean():.4f}; "
            f"sign test {wins}/{trials}, p={p:.2e}")
    assert ok


@pytest.mark.slow
def test_c07_end_to_end_extraction(ablation, verdict):
    rate = float(np.mean(ablation[True]["extraction"] < ablation["baseline"]))
    ok = rate >= 0.70
    verdict(7, "end-to-end extraction", ok,
            f"corrected model beats mixture on {rate:.1%} of {len(ablation['baseline'])} samples")
    assert ok


# -- data and DSP ----------------------------------------------------------


def test_c08_mixture_protocol(verdict):
    cfg = mixgen.CorpusConfig()
    worst_snr, worst_add, events = 0.0, 0.0, 0
    for i in range(500):
        s = mixgen.make_mixture(cfg, mixgen.sample_seed(0, "train", i))
        for spec, got in zip(s.events, s.realized_snrs()):
            worst_snr = max(worst_snr, abs(spec.snr_db - got))
            events += 1
        rest = s.mixture - s.background - np.sum(s.event_stems, axis=0)
        worst_add = max(worst_add, float(np.sqrt(np.mean(rest**2))))
    ok = worst_snr <= 0.1 and worst_add < 1e-6
    verdict(8, "mixture protocol", ok,
            f"500 samples, {events} events, max SNR error {worst_snr:.1e} dB, max additivity residual {worst_add:.1e}")
    assert ok


def test_c09_dsp_pipeline(verdict):
    cfg = audio.MelConfig()
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, 16000)
    round_trip = float(np.sqrt(np.mean((audio.istft(audio.stft(x, cfg), x.size, cfg) - x) ** 2)))

    y = 0.5 * np.sin(2 * np.pi * 440 * np.arange(8000) / SR) + 0.1 * rng.standard_normal(8000)
    _, errors = audio.griffin_lim(audio.log_mel(y, cfg), 60, cfg, length=8000, return_errors=True)
    monotone = bool(np.all(np.diff(errors) <= 0))

    tone = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(SR) / SR)
    rec = audio.griffin_lim(audio.log_mel(tone, cfg), 60, cfg, length=SR)
    peak_bin = int(np.argmax(np.abs(audio.stft(rec, cfg)).mean(axis=0)))
    expected = round(1000 * cfg.n_fft / SR)
    ok = round_trip < 1e-6 and monotone and abs(peak_bin - expected) <= 1
    verdict(9, "DSP pipeline", ok,
            f"STFT round trip {round_trip:.1e} RMS; GL error non-increasing over {len(errors)} iterations: {monotone}; "
            f"tone peak bin {peak_bin} (expected {expected})")
    assert ok


# -- CLI determinism -------------------------------------------------------

SMALL = """\
corpus:
  canvas_seconds: 2.0
  duration_range: [0.3, 1.0]
model:
  hidden: 32
  emb_dim: 16
  clip_frames: 32
  clips_per_item: 2
train:
  batch_size: 8
"""


def _tree(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_cli_determinism(tmp_path, capsys, verdict):
    cfg = tmp_path / "small.yaml"
    cfg.write_text(SMALL)

    def twice(name, make_argv, capture_stdout=False):
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            code = cli.main([str(a) for a in make_argv(out)])
            assert code == 0, f"{name} exited {code}"
            stdout = capsys.readouterr().out
            files = _tree(out) if out.exists() else {}
            outputs.append((files, stdout if capture_stdout else None))
        return outputs[0] == outputs[1]

    results = {
        "schedule inspect": twice("sched", lambda o: ["schedule", "inspect", "--correct", "--out", o]),
        "gen-data": twice("gen", lambda o: ["gen-data", "--config", cfg, "--out", o, "--train", 6,
                                            "--valid", 1, "--test", 2, "--seed", 3]),
    }
    corpus = tmp_path / "gen" / "a"
    results["train"] = twice("train", lambda o: ["train", "--config", cfg, "--corpus", corpus, "--out", o,
                                                 "--epochs", 2, "--seed", 3])
    ckpt = tmp_path / "train" / "a" / "checkpoint.bin"
    results["extract"] = twice("extract", lambda o: ["extract", "--config", cfg, "--checkpoint", ckpt,
                                                     "--corpus", corpus, "--out", o, "--steps", 5,
                                                     "--griffin-lim-iters", 3, "--seed", 3])
    outputs = tmp_path / "extract" / "a"
    results["eval"] = twice("eval", lambda o: ["eval", "--corpus", corpus, "--outputs", outputs,
                                               "--report", o / "report.csv"], capture_stdout=True)
    results["demo-gaussian"] = twice("demo", lambda o: ["demo-gaussian", "--N", 500, "--seed", 3],
                                     capture_stdout=True)
    ok = all(results.values())
    verdict(10, "CLI determinism", ok, ", ".join(f"{k}: {'same' if v else 'DIFFERENT'}" for k, v in results.items()))
    assert ok
