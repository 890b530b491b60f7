"""Command-line entry point: ``dpm-tse <command> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 missing inputs,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audio, checkpoint, config as config_mod, evaluate, mixgen
from .denoiser import GaussianOracle, TrainingDivergedError, init_params, train
from .diffusion import NOISE_VARIANCES, sample
from .estimators import TargetSoundExtractor
from .schedule import (build_linear_schedule, dump_schedule, plan_inference_steps,
                       rescale_zero_terminal_snr, schedule_csv, snr)

logger = logging.getLogger("dpm_tse")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
POINT_MASS_RTOL = 1e-12


class UsageError(Exception):
    pass


class MissingInputError(Exception):
    pass


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def int_range(text):
    try:
        lo, hi = (int(v) for v in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO-HI, got {text!r}") from None
    return lo, hi


def float_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    return lo, hi


# ---------------------------------------------------------------------------
# config plumbing


def resolve_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load_config(getattr(args, "config", None))
    if getattr(args, "paper_scale", False):
        cfg = config_mod.apply_overrides(cfg, config_mod.PAPER_SCALE)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _mel_from_record(cfg: config_mod.RunConfig, record: dict) -> audio.MelConfig:
    norm = record.get("norm") or {}
    if "log_max" not in norm:
        return cfg.mel
    return cfg.mel.with_stats(norm.get("log_min", cfg.mel.log_min), norm["log_max"])


def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    if getattr(args, "corpus", None):
        return Path(args.corpus) / args.split / "manifest.jsonl"
    raise UsageError("give --manifest or --corpus")


def _load_manifest(path: Path):
    if not path.exists():
        raise MissingInputError(f"manifest not found: {path}")
    return mixgen.read_manifest(path), path.parent.parent


def _load_grids(records, root, mel):
    mixes, targets, cats = [], [], []
    for rec in records:
        for key in ("mixture", "target"):
            if not mixgen.resolve(rec, key, root).exists():
                raise MissingInputError(f"missing {key} audio for sample {rec['id']}")
        mix, _ = audio.read_wav(mixgen.resolve(rec, "mixture", root))
        tgt, _ = audio.read_wav(mixgen.resolve(rec, "target", root))
        mixes.append(audio.log_mel(mix, mel).values)
        targets.append(audio.log_mel(tgt, mel).values)
        cats.append(rec["target_category"])
    return np.stack(mixes), np.stack(targets), cats


def _check_single_hash(records, what):
    hashes = {r.get("config_hash", "") for r in records}
    if len(hashes) > 1:
        raise UsageError(f"{what} mixes corpora with different config hashes: {sorted(hashes)}")
    return hashes.pop() if hashes else ""


def _extractor_from_cfg(cfg: config_mod.RunConfig, n_categories: int) -> TargetSoundExtractor:
    s, m, t = cfg.schedule, cfg.model, cfg.train
    return TargetSoundExtractor(
        n_steps=s.T, beta_start=s.beta_start, beta_end=s.beta_end, zero_terminal_snr=s.zero_terminal_snr,
        inference_steps=s.inference_steps, noise_variance=s.noise_variance, clamp=s.clamp,
        n_categories=n_categories, patch_frames=m.patch_frames, hidden=m.hidden, emb_dim=m.emb_dim,
        clip_frames=m.clip_frames, clips_per_item=m.clips_per_item, learning_rate=t.learning_rate,
        weight_decay=t.weight_decay, batch_size=t.batch_size, epochs=t.epochs, random_state=cfg.seed,
        dtype=m.dtype)


# ---------------------------------------------------------------------------
# commands


def cmd_schedule_inspect(args) -> int:
    try:
        default = build_linear_schedule(args.T, args.beta_start, args.beta_end)
        corrected = rescale_zero_terminal_snr(default) if args.T >= 2 else None
        steps = args.steps if args.steps is not None else min(50, args.T)
        plan = plan_inference_steps(default, steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.correct and corrected is None:
        raise UsageError("the zero-terminal-SNR correction needs T >= 2")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "default.csv").write_text(schedule_csv(dump_schedule(default, plan)))
        if corrected is not None:
            (out / "corrected.csv").write_text(schedule_csv(dump_schedule(corrected, plan)))
    T = args.T
    print(f"T={T} beta=[{args.beta_start!r}, {args.beta_end!r}] inference steps={len(plan)}")
    print(f"{'t':>6} {'abar(default)':>15} {'snr(default)':>14} {'abar(corr.)':>14} {'snr(corr.)':>14}")
    shown = sorted({1, 2, max(T // 2, 1), max(T - 1, 1), T})
    for t in shown:
        row = f"{t:>6} {default.alpha_bar(t):15.6e} {snr(default, t):14.6e}"
        if corrected is not None:
            row += f" {corrected.alpha_bar(t):14.6e} {snr(corrected, t):14.6e}"
        print(row)
    print(f"default terminal SNR: {snr(default, T)!r}")
    if corrected is not None:
        print(f"corrected terminal SNR: {snr(corrected, T)!r}")
    chosen = corrected if args.correct else default
    print(f"terminal SNR: {snr(chosen, T)!r} ({'corrected' if args.correct else 'default'} schedule)")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    corpus = cfg.corpus
    updates = {"seed": cfg.seed}
    for name, attr in (("train", "n_train"), ("valid", "n_valid"), ("test", "n_test")):
        if getattr(args, name) is not None:
            updates[attr] = getattr(args, name)
    if args.interferers is not None:
        updates["interferers"] = args.interferers
    if args.snr_range is not None:
        updates["snr_range"] = args.snr_range
    if args.allow_clean:
        updates["allow_clean"] = True
    if args.allow_same_category:
        updates["allow_same_category"] = True
    try:
        corpus = mixgen.CorpusConfig(**{**corpus.__dict__, **updates})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = replace(cfg, corpus=corpus)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from None
    data_hash = cfg.data_hash()
    mixgen.generate_corpus(corpus, out, cfg.mel, config_hash=data_hash)
    config_mod.dump_config(cfg, out / "config.yaml")
    total = corpus.n_train + corpus.n_valid + corpus.n_test
    print(f"wrote {total} mixture/target pairs to {out} (config hash {data_hash})")
    return EXIT_OK


def _train_meta(cfg, data_hash, categories, mel):
    return {"config": cfg.to_dict(), "config_hash": cfg.model_hash(), "data_hash": data_hash,
            "categories": list(categories), "mel": mel.__dict__}


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.lr is not None:
        cfg = replace(cfg, train=replace(cfg.train, learning_rate=args.lr))
    manifest = Path(args.corpus) / "train" / "manifest.jsonl"
    records, root = _load_manifest(manifest)
    if args.train is not None:
        records = records[: args.train]
    if not records:
        raise MissingInputError(f"no training samples in {manifest}")
    data_hash = _check_single_hash(records, "training manifest")
    mel = _mel_from_record(cfg, records[0])
    categories = list(cfg.corpus.categories)
    X, y, names = _load_grids(records, root, mel)
    try:
        c = np.array([categories.index(n) for n in names])
    except ValueError:
        raise UsageError("corpus uses categories missing from the configured registry") from None

    est = _extractor_from_cfg(cfg, len(categories))
    out = Path(args.out)
    ckpt_path = out / "checkpoint.bin"
    meta = _train_meta(cfg, data_hash, categories, mel)
    start_epoch, history, optimizer = 1, [], None
    params = init_params(len(categories), cfg.model.patch_frames, X.shape[2], cfg.model.hidden,
                         cfg.model.emb_dim, seed=cfg.seed, dtype=np.dtype(cfg.model.dtype))
    if args.resume and ckpt_path.exists():
        params, old_meta, optimizer, history = checkpoint.load_checkpoint(ckpt_path, est.train_config())
        if old_meta.get("config_hash") != meta["config_hash"] or old_meta.get("data_hash") != data_hash:
            raise UsageError("checkpoint was produced with a different configuration or corpus")
        params = {k: v.astype(cfg.model.dtype) for k, v in params.items()}
        if optimizer is not None:
            optimizer.m = {k: v.astype(cfg.model.dtype) for k, v in optimizer.m.items()}
            optimizer.v = {k: v.astype(cfg.model.dtype) for k, v in optimizer.v.items()}
        start_epoch = (history[-1].epoch + 1) if history else 1
        print(f"resuming from epoch {start_epoch}")

    def save(epoch, p, opt, hist):
        checkpoint.save_checkpoint(ckpt_path, p, meta, opt, hist)
        checkpoint.write_loss_csv(out / "loss.csv", hist)

    data = est.make_patches(X, y, c)
    try:
        params, history, optimizer = train(params, data, est.train_config(), est.build_schedule(),
                                           optimizer=optimizer, start_epoch=start_epoch,
                                           history=history, callback=save)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save(cfg.train.epochs, params, optimizer, history)
    last = history[-1].loss if history else float("nan")
    print(f"trained {len(history)} steps over {cfg.train.epochs} epochs; final loss {last:.6f}")
    print(f"checkpoint: {ckpt_path} (config hash {meta['config_hash']})")
    return EXIT_OK


def _load_model(args, cfg):
    path = Path(args.checkpoint)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    params, meta, _, history = checkpoint.load_checkpoint(path)
    ck_cfg = config_mod.config_from_dict(meta["config"])
    if getattr(args, "config", None):
        # an explicit config must agree with the checkpoint's training contract
        if cfg.model_hash() != meta["config_hash"]:
            raise UsageError("config hash mismatch between --config and checkpoint "
                             f"({cfg.model_hash()} vs {meta['config_hash']})")
    sched = ck_cfg.schedule
    if args.steps is not None:
        sched = replace(sched, inference_steps=args.steps)
    if args.noise_variance is not None:
        sched = replace(sched, noise_variance=args.noise_variance)
    ck_cfg = replace(ck_cfg, schedule=sched, seed=cfg.seed)
    est = _extractor_from_cfg(ck_cfg, len(meta["categories"]))
    params = {k: v.astype(ck_cfg.model.dtype) for k, v in params.items()}
    est.set_fitted(params, history)
    mel = audio.MelConfig(**meta["mel"])
    return est, meta, mel


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    passthrough = args.oracle or args.mixture_passthrough
    if args.mixture:
        if passthrough:
            raise UsageError("--oracle/--mixture-passthrough need a manifest")
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required")
        est, meta, mel = _load_model(args, cfg)
        if args.category not in meta["categories"]:
            raise UsageError(f"category {args.category!r} unknown to checkpoint")
        wav_path = Path(args.mixture)
        if not wav_path.exists():
            raise MissingInputError(f"mixture not found: {wav_path}")
        wav, _ = audio.read_wav(wav_path)
        jobs = [(wav_path.stem, wav, args.category, None)]
        model_hash, data_hash = meta["config_hash"], meta["data_hash"]
    else:
        records, root = _load_manifest(_manifest_path(args))
        if args.limit is not None:
            records = records[: args.limit]
        data_hash = _check_single_hash(records, "manifest")
        if passthrough:
            est, meta = None, None
            mel = _mel_from_record(cfg, records[0]) if records else cfg.mel
            model_hash = "oracle" if args.oracle else "mixture"
        else:
            if args.checkpoint is None:
                raise UsageError("--checkpoint is required unless --oracle or --mixture-passthrough")
            est, meta, mel = _load_model(args, cfg)
            model_hash = meta["config_hash"]
            if meta["data_hash"] != data_hash:
                raise UsageError(f"config hash mismatch: checkpoint trained on corpus {meta['data_hash']}, "
                                 f"manifest is {data_hash}")
        jobs = []
        for rec in records:
            p = mixgen.resolve(rec, "target" if args.oracle else "mixture", root)
            if not p.exists():
                raise MissingInputError(f"missing audio for sample {rec['id']}: {p}")
            wav, _ = audio.read_wav(p)
            jobs.append((rec["id"], wav, rec["target_category"], rec))

    out.mkdir(parents=True, exist_ok=True)
    plan_steps = None
    for i, (sid, wav, cat, rec) in enumerate(jobs):
        grid = audio.log_mel(wav, mel)
        if passthrough:
            values = grid.values
        else:
            timings = []
            t0 = time.perf_counter()
            values = est.predict_one(grid.values, meta["categories"].index(cat), est.random_state + i,
                                     step_callback=lambda t, dt: timings.append((t, dt)))
            plan_steps = len(timings)
            for t, dt in timings:
                logger.debug("sample %s step t=%d %.4fs", sid, t, dt)
            logger.info("sample %s: %d steps in %.2fs", sid, len(timings), time.perf_counter() - t0)
        result = audio.MelGrid(values, mel.sample_rate, mel.hop, mel.window, grid.original_frames,
                               config_hash=model_hash[:16])
        audio.write_melgrid(out / f"{sid}.mel", result)
        if not args.no_wave:
            if passthrough:
                wave_out = wav
            else:
                wave_out = audio.griffin_lim(result, args.griffin_lim_iters, mel, length=len(wav),
                                             seed=cfg.seed)
            audio.write_wav(out / f"{sid}.wav", wave_out, mel.sample_rate)
    info = {"model_hash": model_hash, "data_hash": data_hash, "seed": cfg.seed,
            "steps": plan_steps, "count": len(jobs)}
    with open(out / "extract.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, sort_keys=True, indent=1)
        fh.write("\n")
    if plan_steps is not None:
        print(f"inference steps per sample: {plan_steps}")
    print(f"wrote {len(jobs)} extractions to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    records, root = _load_manifest(_manifest_path(args))
    outputs = Path(args.outputs)
    info_path = outputs / "extract.json"
    if info_path.exists():
        info = json.loads(info_path.read_text())
        data_hash = _check_single_hash(records, "manifest")
        if info.get("data_hash") != data_hash:
            raise UsageError(f"config hash mismatch: outputs were made from corpus {info.get('data_hash')}, "
                             f"manifest is {data_hash}")
    present = [r for r in records if (outputs / f"{r['id']}.mel").exists()]
    if not present:
        print(f"error: no extraction outputs in {outputs} match {len(records)} manifest entries",
              file=sys.stderr)
        return EXIT_MISSING
    absent = [r["id"] for r in records if not (outputs / f"{r['id']}.mel").exists()]
    for sid in absent:
        logger.warning("no output for sample %s", sid)

    def load(rec):
        mel = _mel_from_record(cfg, rec)
        tgt, _ = audio.read_wav(mixgen.resolve(rec, "target", root))
        ref = audio.log_mel(tgt, mel)
        mask = evaluate.region_mask(rec["regions"], ref.frames, mel.sample_rate, mel.hop, mel.window,
                                    ref.original_frames)
        return evaluate.SampleInputs(rec["id"], ref, tgt, mask, rec)

    def extractor(inputs):
        grid = audio.read_melgrid(outputs / f"{inputs.sample_id}.mel")
        wav_path = outputs / f"{inputs.sample_id}.wav"
        wave_ = audio.read_wav(wav_path)[0] if wav_path.exists() else None
        return evaluate.Extraction(grid, wave_)

    report = evaluate.evaluate_corpus(present, extractor, load)
    report.missing = sorted(set(report.missing) | set(absent))
    report_path = Path(args.report) if args.report else outputs / "report.csv"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_csv())
    print(report.summary_table())
    if report.missing:
        print(f"warning: {len(report.missing)} of {len(records)} samples had no output", file=sys.stderr)
    return EXIT_OK


def cmd_demo_gaussian(args) -> int:
    cfg = resolve_config(args)
    try:
        sched = build_linear_schedule(args.T, args.beta_start, args.beta_end)
        if args.correct:
            sched = rescale_zero_terminal_snr(sched)
        plan = plan_inference_steps(sched, args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.sigma < 0:
        raise UsageError("--sigma must be nonnegative")
    term = snr(sched, sched.T)
    if term > 0:
        print(f"WARNING: nonzero terminal SNR {term:.6e}; the sampler does not start from pure noise")
    oracle = GaussianOracle(sched, args.mu, args.sigma)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        x = sample(oracle, np.zeros((args.N, args.d)), 0, plan, sched, seed=cfg.seed, clamp=None,
                   noise_variance=args.noise_variance)
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if args.N > 1 else np.zeros(args.d)
    mean_tol = args.mean_sigmas * max(args.sigma, 0.0) / np.sqrt(args.N)
    mean_ok = bool(np.all(np.abs(mean - args.mu) <= mean_tol))
    # a degenerate target is reproduced up to the rounding of the v round trip
    point_tol = POINT_MASS_RTOL * max(1.0, abs(args.mu))
    if args.sigma > 0:
        var_ok = bool(np.all(np.abs(var - args.sigma**2) <= args.var_rtol * args.sigma**2))
    else:
        var_ok = bool(np.all(np.abs(x - args.mu) <= point_tol))
    print(f"schedule: T={sched.T} {'corrected' if args.correct else 'default'}; steps={len(plan)}; "
          f"N={args.N} d={args.d}")
    print(f"target mean {args.mu!r}, empirical mean {np.array2string(mean, precision=5)}")
    print(f"target variance {args.sigma ** 2!r}, empirical variance {np.array2string(var, precision=5)}")
    if args.sigma == 0:
        print(f"max |x - mu| = {float(np.max(np.abs(x - args.mu))):.3e} (tolerance {point_tol:.0e})")
    print(f"mean within {args.mean_sigmas} sigma/sqrt(N): {'PASS' if mean_ok else 'FAIL'}")
    if args.sigma > 0:
        print(f"variance within {args.var_rtol:.0%}: {'PASS' if var_ok else 'FAIL'}")
    else:
        print(f"all samples equal mu: {'PASS' if var_ok else 'FAIL'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (flags override it)")
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (overrides config file and DPM_TSE_SEED)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(prog="dpm-tse", description="Diffusion target sound extraction toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    sch = sub.add_parser("schedule", help="noise schedule tools")
    sch_sub = sch.add_subparsers(dest="schedule_command", required=True)
    ins = sch_sub.add_parser("inspect", parents=[common], help="dump default and corrected schedules")
    ins.add_argument("--T", type=positive_int, default=1000, help="diffusion steps")
    ins.add_argument("--beta-start", type=float, default=1e-4)
    ins.add_argument("--beta-end", type=float, default=0.02)
    ins.add_argument("--correct", action="store_true", help="select the zero-terminal-SNR schedule")
    ins.add_argument("--steps", type=positive_int, default=None, help="inference steps for the in_plan column")
    ins.add_argument("--out", help="directory for default.csv and corrected.csv")
    ins.set_defaults(func=cmd_schedule_inspect)

    gen = sub.add_parser("gen-data", parents=[common], help="generate a synthetic mixture corpus")
    gen.add_argument("--out", required=True, help="corpus directory")
    gen.add_argument("--train", type=nonneg_int, default=None)
    gen.add_argument("--valid", type=nonneg_int, default=None)
    gen.add_argument("--test", type=nonneg_int, default=None)
    gen.add_argument("--interferers", type=int_range, default=None, help="LO-HI interferer count (default 1-3)")
    gen.add_argument("--allow-clean", action="store_true", help="permit mixtures without interferers")
    gen.add_argument("--allow-same-category", action="store_true",
                     help="let interferers share the target's category")
    gen.add_argument("--snr-range", type=float_range, default=None, help="LO:HI foreground SNR in dB")
    gen.add_argument("--paper-scale", action="store_true", help="full-size split counts (very slow)")
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", parents=[common], help="train the tiny conditional denoiser")
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--out", required=True, help="directory for checkpoint.bin and loss.csv")
    tr.add_argument("--epochs", type=nonneg_int, default=None)
    tr.add_argument("--train", type=positive_int, default=None, help="use only the first N training samples")
    tr.add_argument("--lr", type=float, default=None, help="learning rate")
    tr.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    tr.add_argument("--paper-scale", action="store_true", help="full-length training (very slow)")
    tr.set_defaults(func=cmd_train)

    ex = sub.add_parser("extract", parents=[common], help="extract target sounds from mixtures")
    ex.add_argument("--checkpoint")
    ex.add_argument("--manifest")
    ex.add_argument("--corpus")
    ex.add_argument("--split", default="test", choices=mixgen.SPLITS)
    ex.add_argument("--mixture", help="single mixture WAV (with --category)")
    ex.add_argument("--category")
    ex.add_argument("--out", required=True)
    ex.add_argument("--steps", type=positive_int, default=None, help="inference steps (default from checkpoint)")
    ex.add_argument("--noise-variance", choices=NOISE_VARIANCES, default=None)
    ex.add_argument("--limit", type=positive_int, default=None, help="first N manifest entries only")
    ex.add_argument("--oracle", action="store_true", help="write ground-truth target mels (harness check)")
    ex.add_argument("--mixture-passthrough", action="store_true", help="write the mixture as the estimate")
    ex.add_argument("--griffin-lim-iters", type=positive_int, default=60)
    ex.add_argument("--no-wave", action="store_true", help="skip Griffin-Lim waveform output")
    ex.set_defaults(func=cmd_extract)

    ev = sub.add_parser("eval", parents=[common], help="score extraction outputs against the corpus")
    ev.add_argument("--manifest")
    ev.add_argument("--corpus")
    ev.add_argument("--split", default="test", choices=mixgen.SPLITS)
    ev.add_argument("--outputs", required=True)
    ev.add_argument("--report", help="CSV path (default OUTPUTS/report.csv)")
    ev.set_defaults(func=cmd_eval)

    demo = sub.add_parser("demo-gaussian", parents=[common], help="validate the sampler on Gaussian data")
    demo.add_argument("--mu", type=float, default=0.0)
    demo.add_argument("--sigma", type=float, default=1.0)
    demo.add_argument("--N", type=positive_int, default=5000)
    demo.add_argument("--d", type=positive_int, default=8)
    demo.add_argument("--T", type=positive_int, default=1000)
    demo.add_argument("--beta-start", type=float, default=1e-4)
    demo.add_argument("--beta-end", type=float, default=0.02)
    demo.add_argument("--steps", type=positive_int, default=50)
    demo.add_argument("--no-correct", dest="correct", action="store_false",
                      help="use the default schedule (nonzero terminal SNR)")
    demo.add_argument("--noise-variance", choices=NOISE_VARIANCES, default="forward")
    demo.add_argument("--mean-sigmas", type=float, default=4.0)
    demo.add_argument("--var-rtol", type=float, default=0.1)
    demo.set_defaults(func=cmd_demo_gaussian)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except mixgen.ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FloatingPointError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
