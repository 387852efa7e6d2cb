"""Command-line entry point: ``utts {prepare,train,synthesize,convert,evaluate}``.

Artifacts live under ``--out-dir`` in content-addressed stage directories::

    prepare-<h>/          mels/<id>.ufm, codebook.bin, ua.npz, durations.jsonl, summary.json
    cdsvae-<h>/           checkpoint.pt, train_log.jsonl
    cdsvae-dual-<h>/      second-round checkpoint
    duration-<h>/         checkpoint.pt, speaker_pool.npz
    fa2ua-<h>/            checkpoint.pt
    synthesize-<h>/ convert-<h>/ evaluate-<h>/

Each directory holds ``meta.json`` recording the full config hash and the
stage hash it was built from; a finished stage is skipped unless
``--force`` is given.  Exit status: 0 success, 1 invalid input or
configuration, 2 runtime or stage failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import StageError, ValidationError

log = logging.getLogger("utts")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- context


class Context:
    def __init__(self, cfg, force=False):
        self.cfg = cfg
        self.force = force
        self.out = Path(cfg.get("paths.out_dir"))

    # stage hashes chain the hashes of their inputs
    def manifest_digest(self):
        path = self.cfg.get("paths.manifest")
        if path is None:
            raise ValidationError("no manifest configured (paths.manifest or --manifest)")
        p = Path(path)
        if not p.is_file():
            raise ValidationError(f"manifest {p} not found")
        return hashlib.sha256(p.read_bytes()).hexdigest()

    def key(self, stage):
        from .config import digest

        c = self.cfg
        if stage == "prepare":
            parts = {"manifest": self.manifest_digest(), "features": c["features"], "alignment": c["alignment"],
                     "test": c.get("data.test_speakers"), "seed": c["seed"]}
        elif stage == "cdsvae":
            parts = {"prepare": self.key("prepare"), "cdsvae": c["cdsvae"], "seed": c["seed"]}
        elif stage == "cdsvae-dual":
            parts = {"base": self.key("cdsvae"), "dual": c["dual"]}
        elif stage == "duration":
            parts = {"prepare": self.key("prepare"), "base": self.key("cdsvae"),
                     "duration": c.get("frontend.duration"), "seed": c["seed"]}
        elif stage == "fa2ua":
            parts = {"prepare": self.key("prepare"), "fa2ua": c.get("frontend.fa2ua"), "seed": c["seed"]}
        else:
            raise ValidationError(f"unknown stage {stage!r}")
        return digest(parts)

    def stage_dir(self, stage):
        return self.out / f"{stage}-{self.key(stage)[:12]}"

    def done(self, d):
        return (d / "meta.json").exists()

    def begin(self, d):
        """True if the stage should run; clears it first under ``--force``."""
        if self.done(d) and not self.force:
            print(f"{d.name}: up to date")
            return False
        if self.force and d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True, exist_ok=True)
        return True

    def finish(self, d, stage, **info):
        meta = {"stage": stage, "config_hash": self.cfg.hash(), "stage_hash": d.name.rsplit("-", 1)[-1], **info}
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        self.cfg.save(d / "config.yaml")

    def require(self, stage):
        d = self.stage_dir(stage)
        if not self.done(d):
            raise ValidationError(f"stage {stage!r} has not been run for this configuration (expected {d})")
        return d

    def manifest(self):
        from .features import load_manifest

        self.manifest_digest()
        return load_manifest(self.cfg.get("paths.manifest"))

    def split(self, manifest):
        test = set(self.cfg.get("data.test_speakers"))
        unknown = test - set(manifest.speakers())
        if unknown:
            raise ValidationError(f"test speakers not in manifest: {sorted(unknown)}")
        train = [e for e in manifest if e.speaker_id not in test]
        held = [e for e in manifest if e.speaker_id in test]
        if not train:
            raise ValidationError("every speaker is held out; nothing to train on")
        return train, held


# ---------------------------------------------------------------- prepare


def _ssl_features(ctx, manifest, e, mel):
    from .features import cepstral_features, load_feature_matrix

    if ctx.cfg.get("features.ssl") == "cepstral":
        return cepstral_features(mel)
    if not e.ssl_feature_path:
        raise ValidationError(f"{e.utterance_id}: features.ssl=files but the manifest has no ssl_feature_path")
    return load_feature_matrix(manifest.resolve(e.ssl_feature_path))


def cmd_prepare(ctx):
    from .alignment import assign_units, fit_codebook, fit_length, read_fa_file, resample_alignment, save_codebook
    from .features import FRAME_RATE, FeatureMatrix, compute_mel, load_audio, save_feature_matrix

    if ctx.cfg.get("features.ssl") not in ("cepstral", "files"):
        raise ValidationError("features.ssl must be 'cepstral' or 'files'")
    manifest = ctx.manifest()
    train, _ = ctx.split(manifest)
    d = ctx.stage_dir("prepare")
    if not ctx.begin(d):
        return 0
    (d / "mels").mkdir(exist_ok=True)
    mels, feats = {}, {}
    for e in manifest:
        try:
            mel = compute_mel(load_audio(manifest.resolve(e.audio_path)))
        except (OSError, RuntimeError) as exc:
            raise StageError("prepare", f"{e.utterance_id}: {exc}") from exc
        mels[e.utterance_id] = mel
        save_feature_matrix(d / "mels" / f"{e.utterance_id}.ufm", FeatureMatrix(mel.frames, FRAME_RATE))
        feats[e.utterance_id] = _ssl_features(ctx, manifest, e, mel)

    a = ctx.cfg["alignment"]
    cb = fit_codebook([feats[e.utterance_id] for e in train], a["n_units"], ctx.cfg["seed"], a["max_iter"], a["tol"])
    save_codebook(d / "codebook.bin", cb)
    ua = {}
    for uid, fm in feats.items():
        units = resample_alignment(assign_units(fm, cb), fm.frame_rate, FRAME_RATE)
        ua[uid] = fit_length(units, len(mels[uid])).tokens.astype(np.int16)
    np.savez(d / "ua.npz", **ua)

    missing = []
    with open(d / "durations.jsonl", "w") as fh:
        for e in manifest:
            path = manifest.resolve(e.fa_path) if e.fa_path else None
            if path is None or not path.exists():
                missing.append(e.utterance_id)
                continue
            pd = read_fa_file(path)
            if pd.total_frames != len(mels[e.utterance_id]):
                log.warning("%s: FA covers %d frames, mel has %d", e.utterance_id, pd.total_frames,
                            len(mels[e.utterance_id]))
            fh.write(json.dumps({"id": e.utterance_id, "phonemes": pd.phonemes.tolist(),
                                 "durations": pd.durations.tolist()}) + "\n")
    for uid in missing:
        print(f"warning: {uid}: no forced alignment, no duration targets", file=sys.stderr)
    summary = {"utterances": len(manifest), "mels": len(mels), "ua": len(ua), "duration_targets":
               len(manifest) - len(missing), "missing_fa": missing, "units": cb.K,
               "kmeans_iterations": len(cb.inertia_history), "train_utterances": len(train)}
    (d / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    ctx.finish(d, "prepare")
    print(f"prepared {len(mels)} utterances ({len(missing)} without FA) in {d}")
    return 0


def _prepared(ctx):
    from .features import MelSpectrogram, load_feature_matrix

    d = ctx.require("prepare")
    manifest = ctx.manifest()
    mels = {e.utterance_id: MelSpectrogram(load_feature_matrix(d / "mels" / f"{e.utterance_id}.ufm").frames)
            for e in manifest}
    with np.load(d / "ua.npz") as z:
        ua = {k: z[k].astype(np.int64) for k in z.files}
    return manifest, mels, ua


# ---------------------------------------------------------------- train


def _arch(ctx):
    from .cdsvae import ArchConfig

    c = ctx.cfg["cdsvae"]
    base = {"desk": ArchConfig.desk, "table1": ArchConfig.table1}.get(c["preset"])
    if base is None:
        raise ValidationError(f"cdsvae.preset must be 'desk' or 'table1', got {c['preset']!r}")
    over = {"alignment_kind": c["alignment_kind"], "n_units": ctx.cfg.get("alignment.n_units"), **c["arch"]}
    try:
        return base(**over)
    except TypeError as exc:
        raise ValidationError(f"cdsvae.arch: {exc}") from exc


def _schedule(d):
    from .cdsvae import Schedule

    return Schedule(**d)


def _alignments(ctx, manifest, mels, ua):
    from .alignment import AlignmentSequence, expand_phonemes, fit_length, read_fa_file

    kind = ctx.cfg.get("cdsvae.alignment_kind")
    n_units = ctx.cfg.get("alignment.n_units")
    out = {}
    for e in manifest:
        if kind == "UA":
            out[e.utterance_id] = AlignmentSequence.ua(ua[e.utterance_id], n_units)
        elif e.fa_path and manifest.resolve(e.fa_path).exists():
            fa = expand_phonemes(read_fa_file(manifest.resolve(e.fa_path)))
            out[e.utterance_id] = fit_length(fa, len(mels[e.utterance_id]))
        else:
            log.warning("%s: no forced alignment, skipped", e.utterance_id)
    return out


def _resume_point(d):
    ck = d / "checkpoint.pt"
    return ck if ck.exists() and not (d / "meta.json").exists() else None


def _begin_training(ctx, d):
    """Like ``begin`` but keeps an interrupted run's checkpoint so it resumes."""
    if ctx.done(d) and not ctx.force:
        print(f"{d.name}: up to date")
        return False
    if ctx.force and d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    return True


def _train_cdsvae(ctx, dual):
    from .cdsvae import LossConfig, TrainItem, train

    manifest, mels, ua = _prepared(ctx)
    train_entries, _ = ctx.split(manifest)
    stage = "cdsvae-dual" if dual else "cdsvae"
    base = None
    if dual:
        base_dir = ctx.stage_dir("cdsvae")
        if not ctx.done(base_dir):
            raise ValidationError(f"cdsvae-dual needs a trained base C-DSVAE checkpoint; run 'train cdsvae' first "
                                  f"(expected {base_dir})")
        base = base_dir / "checkpoint.pt"
    d = ctx.stage_dir(stage)
    if not _begin_training(ctx, d):
        return 0
    align = _alignments(ctx, manifest, mels, ua)
    items = [TrainItem(e.utterance_id, mels[e.utterance_id], align[e.utterance_id])
             for e in train_entries if e.utterance_id in align]
    loss = LossConfig(**ctx.cfg.get("cdsvae.loss"))
    sched = _schedule(ctx.cfg.get("dual.schedule" if dual else "cdsvae.schedule"))
    res = train(items, _arch(ctx), loss, sched, out_dir=d, seed=ctx.cfg["seed"], dual=dual,
                init_from=base, resume=_resume_point(d), extra={"config_hash": ctx.cfg.hash()})
    ctx.finish(d, stage, steps=res.step)
    if res.epochs:
        print(f"{stage}: {len(res.epochs)} epochs, final " +
              " ".join(f"{k}={v:.4g}" for k, v in res.epochs[-1].items() if k not in ("epoch",)))
    return 0


def _frontend_cfg(ctx, name):
    from .frontend.duration import DurationConfig
    from .frontend.fa2ua import FA2UAConfig

    c = ctx.cfg.get(f"frontend.{name}")
    cls = DurationConfig if name == "duration" else FA2UAConfig
    over = dict(c["arch"])
    if name == "fa2ua":
        over.setdefault("n_units", ctx.cfg.get("alignment.n_units"))
    if c["preset"] not in ("desk", "table1"):
        raise ValidationError(f"frontend.{name}.preset must be 'desk' or 'table1'")
    try:
        return cls.desk(**over) if c["preset"] == "desk" else cls(**over)
    except TypeError as exc:
        raise ValidationError(f"frontend.{name}.arch: {exc}") from exc


def _subset(manifest, entries):
    from .features import DatasetManifest

    return DatasetManifest(list(entries), manifest.root)


def _train_duration(ctx):
    from .cdsvae import load_model
    from .frontend.training import build_speaker_pool, train_duration

    manifest, mels, _ = _prepared(ctx)
    train_entries, _ = ctx.split(manifest)
    base = ctx.require("cdsvae") / "checkpoint.pt"
    d = ctx.stage_dir("duration")
    if not _begin_training(ctx, d):
        return 0
    model = load_model(base)
    speaker_of = {e.utterance_id: e.speaker_id for e in train_entries}
    pool = build_speaker_pool({u: mels[u] for u in speaker_of}, speaker_of, model)
    np.savez(d / "speaker_pool.npz", **pool)
    c = ctx.cfg.get("frontend.duration")
    res = train_duration(_subset(manifest, train_entries), pool, _frontend_cfg(ctx, "duration"),
                         _schedule(c["schedule"]), out_dir=d, seed=ctx.cfg["seed"], resume=_resume_point(d),
                         val_fraction=c["val_fraction"], extra={"config_hash": ctx.cfg.hash()})
    ctx.finish(d, "duration")
    if res.history:
        print(f"duration: final train MSE {res.history[-1]['train']:.4g}, validation MSE {res.history[-1]['val']:.4g}")
    return 0


def _train_fa2ua(ctx):
    from .alignment import AlignmentSequence
    from .frontend.training import train_fa2ua

    manifest, _, ua = _prepared(ctx)
    train_entries, _ = ctx.split(manifest)
    d = ctx.stage_dir("fa2ua")
    if not _begin_training(ctx, d):
        return 0
    n = ctx.cfg.get("alignment.n_units")
    c = ctx.cfg.get("frontend.fa2ua")
    res = train_fa2ua(_subset(manifest, train_entries), {u: AlignmentSequence.ua(t, n) for u, t in ua.items()},
                      _frontend_cfg(ctx, "fa2ua"), _schedule(c["schedule"]), out_dir=d, seed=ctx.cfg["seed"],
                      resume=_resume_point(d), val_fraction=c["val_fraction"],
                      extra={"config_hash": ctx.cfg.hash()})
    ctx.finish(d, "fa2ua")
    if res.history:
        print(f"fa2ua: final train NLL {res.history[-1]['train']:.4g}, masked accuracy {res.history[-1]['val']:.4g}")
    return 0


def cmd_train(ctx, stage):
    if stage in ("cdsvae", "cdsvae-dual"):
        return _train_cdsvae(ctx, stage == "cdsvae-dual")
    if stage == "duration":
        return _train_duration(ctx)
    return _train_fa2ua(ctx)


# ---------------------------------------------------------------- generation


def _acoustic(ctx, which=None):
    from .cdsvae import load_model

    which = which or ctx.cfg.get("synthesis.acoustic")
    if which not in ("dual", "base"):
        raise ValidationError("synthesis.acoustic must be 'dual' or 'base'")
    stage = "cdsvae-dual" if which == "dual" else "cdsvae"
    return load_model(ctx.require(stage) / "checkpoint.pt")


def _vocoder(ctx):
    from .pipeline import VocoderHandle

    s = ctx.cfg["synthesis"]
    if s["vocoder"] == "internal":
        return VocoderHandle.internal(s["iterations"])
    if s["vocoder"] == "external":
        return VocoderHandle.external(s["endpoint"], s["timeout"])
    raise ValidationError(f"synthesis.vocoder must be 'internal' or 'external', got {s['vocoder']!r}")


def _output_dir(ctx, stage, *parts):
    from .config import digest

    d = ctx.out / f"{stage}-{digest([ctx.cfg.hash(), *parts])[:12]}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_synthesize(ctx, args):
    from .features import save_audio
    from .frontend.lexicon import load_lexicon
    from .frontend.training import load_duration_model, load_fa2ua_model
    from .pipeline import SynthesisModels, SynthesisRequest, synthesize

    s = ctx.cfg["synthesis"]
    lex_path = ctx.cfg.get("paths.lexicon")
    if lex_path is None:
        raise ValidationError("no lexicon configured (paths.lexicon)")
    lex = load_lexicon(lex_path, ctx.cfg.get("paths.symbols"))
    dur_dir = ctx.require("duration")
    with np.load(dur_dir / "speaker_pool.npz") as z:
        pool = {k: z[k] for k in z.files}
    models = SynthesisModels(_acoustic(ctx), load_duration_model(dur_dir / "checkpoint.pt"),
                             load_fa2ua_model(ctx.require("fa2ua") / "checkpoint.pt"), lex, pool, _vocoder(ctx))
    req = SynthesisRequest(args.text, args.ref_audio, s["duration_speaker"], ctx.cfg["seed"], s["sample_speaker"],
                           s["boundary"])
    out = synthesize(req, models)
    d = _output_dir(ctx, "synthesize", out.bundle.config_hash)
    wav_path = Path(args.out) if args.out else d / "synth.wav"
    save_audio(wav_path, out.waveform)
    out.bundle.save(d / "bundle.npz")
    meta = {"config_hash": ctx.cfg.hash(), "request_hash": out.bundle.config_hash, "bundle_digest": out.bundle.digest(),
            "wav": str(wav_path), "frames": int(len(out.bundle.mel)), "samples": int(len(out.waveform))}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {wav_path} ({len(out.waveform)} samples, {len(out.bundle.mel)} frames); bundle {d / 'bundle.npz'}")
    return 0


def cmd_convert(ctx, args):
    from .features import compute_mel, load_audio, save_audio
    from .pipeline import vocode, voice_convert

    src = compute_mel(load_audio(args.src))
    tgt = compute_mel(load_audio(args.tgt))
    model = _acoustic(ctx, args.model)
    mel = voice_convert(src, tgt, model)
    try:
        wav = vocode(mel, _vocoder(ctx), ctx.cfg["seed"])
    except Exception as exc:
        raise StageError("vocode", str(exc)) from exc
    d = _output_dir(ctx, "convert", hashlib.sha256(Path(args.src).read_bytes()).hexdigest(),
                    hashlib.sha256(Path(args.tgt).read_bytes()).hexdigest(), args.model)
    wav_path = Path(args.out) if args.out else d / "converted.wav"
    save_audio(wav_path, wav)
    np.save(d / "mel.npy", mel.frames)
    (d / "meta.json").write_text(json.dumps({"config_hash": ctx.cfg.hash(), "src": args.src, "tgt": args.tgt,
                                             "wav": str(wav_path)}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {wav_path}")
    return 0


# ---------------------------------------------------------------- evaluate


def _read_transcripts(path):
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if rows and rows[0][:3] == ["id", "reference", "hypothesis"]:
        rows = rows[1:]
    for r in rows:
        if len(r) != 3:
            raise ValidationError(f"{path}: expected 'id<TAB>reference<TAB>hypothesis', got {r}")
    return rows


def cmd_evaluate(ctx, args):
    from .alignment import expand_phonemes, read_fa_file
    from .eval import (cer_wer, compute_eer, content_frames, embed_utterances, export_projection, make_trials,
                       phoneme_probe, read_trials, score_trials, write_report, write_trials)

    e = ctx.cfg["eval"]
    d = _output_dir(ctx, "evaluate", args.model, args.trials, args.transcripts, args.speaker_embeddings)
    rows = []
    if args.transcripts:
        pairs = _read_transcripts(args.transcripts)
        rates = [cer_wer(ref, hyp) for _, ref, hyp in pairs]
        rows += [("cer", float(np.mean([r["cer"] for r in rates])), len(rates)),
                 ("wer", float(np.mean([r["wer"] for r in rates])), len(rates))]

    needs_model = not args.transcripts or args.trials or args.speaker_embeddings
    if needs_model:
        manifest, mels, _ = _prepared(ctx)
        _, held = ctx.split(manifest)
        if not held:
            print("warning: data.test_speakers is empty; evaluating on all utterances", file=sys.stderr)
            held = list(manifest)
        speaker_of = {x.utterance_id: x.speaker_id for x in held}
        if args.trials:
            trials = read_trials(args.trials)
        else:
            trials = make_trials(speaker_of, e["n_trials"], ctx.cfg["seed"])
            write_trials(d / "trials.tsv", trials)
        if args.speaker_embeddings:
            with np.load(args.speaker_embeddings) as z:
                emb = {k: z[k] for k in z.files}
            rows.append(("eer_speaker", compute_eer(score_trials(emb, trials)), len(trials)))
        else:
            model = _acoustic(ctx, args.model)
            utts = [(u, mels[u]) for u in speaker_of]
            spk = embed_utterances(utts, model, "speaker")
            con = embed_utterances(utts, model, "content")
            rows.append(("eer_speaker", compute_eer(score_trials(spk, trials)), len(trials)))
            rows.append(("eer_content", compute_eer(score_trials(con, trials)), len(trials)))
            if len(spk) >= 10:
                export_projection(spk, speaker_of, d / "speaker_projection.tsv", e["projection"], e["perplexity"],
                                  ctx.cfg["seed"])
            feats, labels = [], []
            for x in held:
                path = manifest.resolve(x.fa_path) if x.fa_path else None
                if path is None or not path.exists():
                    continue
                fa = expand_phonemes(read_fa_file(path)).tokens
                cf = content_frames(mels[x.utterance_id], model)
                n = min(len(fa), len(cf))
                feats.append(cf[:n])
                labels.append(fa[:n])
            if feats:
                X, y = np.concatenate(feats), np.concatenate(labels)
                rows.append(("phoneme_probe_top1", phoneme_probe(X, y, e["probe_split"], ctx.cfg["seed"]), len(y)))
                pick = np.random.default_rng(ctx.cfg["seed"]).permutation(len(y))[:2000]
                if len(pick) >= 10:
                    export_projection(X[pick], [str(v) for v in y[pick]], d / "content_projection.tsv",
                                      e["projection"], e["perplexity"], ctx.cfg["seed"])
    write_report(d / "report.tsv", rows)
    (d / "meta.json").write_text(json.dumps({"config_hash": ctx.cfg.hash()}, indent=2) + "\n")
    for metric, value, n in rows:
        print(f"{metric}\t{value:.6g}\t{n}")
    print(f"report: {d / 'report.tsv'}")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    ap = _Parser(prog="utts", description="Desk-scale unsupervised TTS: training, synthesis, evaluation.")
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--force", action="store_true", help="rebuild finished stages")
    ap.add_argument("--out-dir", help="root directory for stage artifacts")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config value, e.g. cdsvae.loss.gamma=0 (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="mels, unit codebook, unit alignments, duration targets")
    p.add_argument("--manifest")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("stage", choices=["cdsvae", "cdsvae-dual", "duration", "fa2ua"])

    p = sub.add_parser("synthesize", help="text to speech in the voice of a reference recording")
    p.add_argument("--text", required=True)
    p.add_argument("--ref-audio", required=True)
    p.add_argument("--vocoder", choices=["internal", "external"])
    p.add_argument("--endpoint")
    p.add_argument("--duration-speaker")
    p.add_argument("--out")

    p = sub.add_parser("convert", help="voice conversion: content of --src in the voice of --tgt")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--model", choices=["base", "dual"], default="base")
    p.add_argument("--vocoder", choices=["internal", "external"])
    p.add_argument("--endpoint")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="EER, phoneme probe, projections, CER/WER")
    p.add_argument("--model", choices=["base", "dual"], default="base")
    p.add_argument("--trials", help="trial list (utt_a, utt_b, is_target); generated if omitted")
    p.add_argument("--transcripts", help="TSV id, reference, hypothesis for CER/WER")
    p.add_argument("--speaker-embeddings", help="npz of precomputed speaker embeddings to score instead")
    return ap


def _layers(args):
    layers = list(args.set)
    if args.seed is not None:
        layers.append({"seed": args.seed})
    if args.out_dir is not None:
        layers.append({"paths": {"out_dir": args.out_dir}})
    if getattr(args, "manifest", None):
        layers.append({"paths": {"manifest": args.manifest}})
    synth = {k: getattr(args, k, None) for k in ("vocoder", "endpoint", "duration_speaker")}
    synth = {k: v for k, v in synth.items() if v is not None}
    if synth:
        layers.append({"synthesis": synth})
    return layers


def run(argv=None) -> int:
    from .config import RunConfig

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = RunConfig.load(args.config, _layers(args))
    ctx = Context(cfg, args.force)
    if args.command == "prepare":
        return cmd_prepare(ctx)
    if args.command == "train":
        return cmd_train(ctx, args.stage)
    if args.command == "synthesize":
        return cmd_synthesize(ctx, args)
    if args.command == "convert":
        return cmd_convert(ctx, args)
    return cmd_evaluate(ctx, args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ValidationError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime and stage failures
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
