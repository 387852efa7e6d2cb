import json
import sys

import numpy as np
import pytest

from utts.cdsvae import load_model
from utts.cli import main
from utts.config import RunConfig
from utts.eval import read_report
from utts.features import compute_mel, load_audio, load_manifest
from utts.pipeline import reconstruct
from utts.toy import make_corpus

TINY = ["cdsvae.arch={latent_dim: 4, share_channels: 8, share_layers: 1, speaker_hidden: 8, speaker_layers: 1, "
        "content_hidden: 8, content_layers: 1, content_rnn_hidden: 8, prior_hidden: 8, prior_layers: 1, "
        "dec_conv_channels: 8, dec_conv_layers: 1, dec_lstm1_hidden: 8, dec_lstm2_hidden: 8, dec_lstm2_layers: 1, "
        "post_channels: 8, post_layers: 1}",
        "alignment.n_units=8",
        "cdsvae.schedule={epochs: 2, batch_size: 4, crop_frames: 40}",
        "dual.schedule={epochs: 1, batch_size: 4, crop_frames: 40}",
        "frontend.duration.arch={d_model: 16, n_heads: 2, n_layers: 1, conv_channels: 16, speaker_dim: 4}",
        "frontend.duration.schedule={epochs: 2, batch_size: 4}",
        "frontend.fa2ua.arch={embed_dim: 8, hidden: 8, layers: 1}",
        "frontend.fa2ua.schedule={epochs: 2, batch_size: 4, crop_frames: 40}",
        "synthesis.iterations=4",
        "eval.n_trials=40"]


def args(workspace, *rest, out=None):
    flags = ["--config", str(workspace["config"])]
    if out is not None:
        flags += ["--out-dir", str(out)]
    return flags + [a for s in TINY for a in ("--set", s)] + list(rest)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = make_corpus(root / "corpus", n_speakers=5, n_test_speakers=2, utts_per_speaker=4, n_words=6,
                         words_per_utt=(2, 3), seed=5)
    # one utterance without a forced alignment
    lines = corpus.manifest_path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["fa_path"] = None
    lines[1] = json.dumps(rec)
    corpus.manifest_path.write_text("\n".join(lines) + "\n")
    cfg = RunConfig({"paths": {"manifest": str(corpus.manifest_path), "lexicon": str(corpus.lexicon_path),
                               "symbols": str(corpus.symbols_path), "out_dir": str(root / "runs")},
                     "data": {"test_speakers": corpus.test_speakers}})
    cfg.save(root / "run.yaml")
    ws = {"root": root, "corpus": corpus, "config": root / "run.yaml", "runs": root / "runs",
          "missing": rec["utterance_id"]}
    for stage in (["prepare"], ["train", "cdsvae"], ["train", "cdsvae-dual"], ["train", "duration"],
                  ["train", "fa2ua"]):
        assert main(args(ws, *stage)) == 0, stage
    return ws


def stage_dir(ws, stage):
    (d,) = [p for p in ws["runs"].iterdir() if p.name.startswith(stage + "-") and
            (stage != "cdsvae" or not p.name.startswith("cdsvae-dual"))]
    return d


def log_lines(d):
    return [json.loads(x) for x in (d / "train_log.jsonl").read_text().splitlines()]


class TestPrepare:
    def test_artifact_counts(self, workspace):
        d = stage_dir(workspace, "prepare")
        s = json.loads((d / "summary.json").read_text())
        assert s["utterances"] == s["mels"] == s["ua"] == 20
        assert s["duration_targets"] == 19 and s["missing_fa"] == [workspace["missing"]]
        assert s["train_utterances"] == 12 and s["units"] == 8
        assert len(list((d / "mels").glob("*.ufm"))) == 20
        with np.load(d / "ua.npz") as z:
            assert len(z.files) == 20 and all(z[k].max() < 8 for k in z.files)

    def test_rerun_is_a_no_op(self, workspace, capsys):
        d = stage_dir(workspace, "prepare")
        before = (d / "summary.json").stat().st_mtime_ns
        assert main(args(workspace, "prepare")) == 0
        assert "up to date" in capsys.readouterr().out
        assert (d / "summary.json").stat().st_mtime_ns == before

    def test_missing_fa_warned(self, workspace, tmp_path, capsys):
        assert main(args(workspace, "prepare", out=tmp_path)) == 0
        err = capsys.readouterr().err
        assert f"warning: {workspace['missing']}: no forced alignment" in err

    def test_meta_records_config_hash(self, workspace):
        d = stage_dir(workspace, "prepare")
        meta = json.loads((d / "meta.json").read_text())
        saved = RunConfig.load(d / "config.yaml")
        assert meta["config_hash"] == saved.hash() and d.name.endswith(meta["stage_hash"])


class TestTrain:
    def test_logs_and_checkpoints(self, workspace):
        for stage in ("cdsvae", "cdsvae-dual", "duration", "fa2ua"):
            d = stage_dir(workspace, stage)
            assert (d / "checkpoint.pt").exists() and (d / "meta.json").exists()
        rows = log_lines(stage_dir(workspace, "cdsvae"))
        assert {"recon", "kld_s", "kld_c", "mup", "lr"} <= set(rows[-1])

    def test_dual_without_base_is_invalid(self, workspace, tmp_path, capsys):
        assert main(args(workspace, "prepare", out=tmp_path)) == 0
        assert main(args(workspace, "train", "cdsvae-dual", out=tmp_path)) == 1
        assert "train cdsvae" in capsys.readouterr().err

    def test_vanilla_logs_zero_mup(self, workspace, tmp_path):
        assert main(args(workspace, "prepare", out=tmp_path)) == 0
        assert main(args(workspace, "--set", "cdsvae.loss.gamma=0", "train", "cdsvae", out=tmp_path)) == 0
        assert all(r["mup"] == 0.0 for r in log_lines(stage_dir({"runs": tmp_path}, "cdsvae")))

    def test_seed_reproduces_final_loss(self, workspace, tmp_path):
        assert main(args(workspace, "prepare", out=tmp_path)) == 0
        assert main(args(workspace, "train", "cdsvae", out=tmp_path)) == 0
        again = log_lines(stage_dir({"runs": tmp_path}, "cdsvae"))[-1]
        first = log_lines(stage_dir(workspace, "cdsvae"))[-1]
        assert again["total"] == first["total"]

    def test_force_rebuilds(self, workspace, tmp_path, capsys):
        assert main(args(workspace, "prepare", out=tmp_path)) == 0
        assert main(args(workspace, "--force", "prepare", out=tmp_path)) == 0
        assert "prepared 20 utterances" in capsys.readouterr().out


class TestGenerate:
    def words(self, ws, n=3):
        return " ".join(line.split()[0] for line in ws["corpus"].lexicon_path.read_text().splitlines()[:n])

    def ref(self, ws):
        return str(ws["corpus"].root / "wav" / f"{ws['corpus'].test_speakers[0]}_000.wav")

    def test_synthesize_is_deterministic(self, workspace, tmp_path):
        outs = []
        for i in range(2):
            wav = tmp_path / f"s{i}.wav"
            assert main(args(workspace, "synthesize", "--text", self.words(workspace), "--ref-audio",
                             self.ref(workspace), "--out", str(wav))) == 0
            outs.append(wav.read_bytes())
        assert outs[0] == outs[1] and len(outs[0]) > 44

    def test_oov_text_is_invalid(self, workspace, capsys):
        assert main(args(workspace, "synthesize", "--text", "qqqzzz", "--ref-audio", self.ref(workspace))) == 1
        assert "QQQZZZ" in capsys.readouterr().err

    def test_unreachable_vocoder_is_a_runtime_failure(self, workspace, capsys):
        code = main(args(workspace, "synthesize", "--text", self.words(workspace), "--ref-audio",
                         self.ref(workspace), "--vocoder", "external", "--endpoint", "http://127.0.0.1:9/x"))
        assert code == 2 and "vocode" in capsys.readouterr().err

    def test_pipe_vocoder(self, workspace, tmp_path):
        wav = tmp_path / "p.wav"
        cmd = f"pipe:{sys.executable} -m utts.vocoder_service --pipe --iterations 4"
        assert main(args(workspace, "synthesize", "--text", self.words(workspace, 1), "--ref-audio",
                         self.ref(workspace), "--vocoder", "external", "--endpoint", cmd, "--out", str(wav))) == 0
        assert load_audio(wav).samples.size > 0

    def test_convert_to_self_is_reconstruction(self, workspace):
        ref = self.ref(workspace)
        assert main(args(workspace, "convert", "--src", ref, "--tgt", ref)) == 0
        (d,) = [p for p in workspace["runs"].iterdir() if p.name.startswith("convert-")]
        model = load_model(stage_dir(workspace, "cdsvae") / "checkpoint.pt")
        expect = reconstruct(compute_mel(load_audio(ref)), model).frames
        np.testing.assert_allclose(np.load(d / "mel.npy"), expect, rtol=1e-6, atol=1e-6)
        meta = json.loads((d / "meta.json").read_text())
        assert "config_hash" in meta


class TestEvaluate:
    def test_model_metrics(self, workspace, capsys):
        assert main(args(workspace, "evaluate")) == 0
        out = capsys.readouterr().out
        report = out.strip().splitlines()[-1].split("report: ")[1]
        r = read_report(report)
        assert {"eer_speaker", "eer_content", "phoneme_probe_top1"} <= set(r)
        assert 0.0 <= r["eer_speaker"][0] <= 1.0

    def test_perfect_embeddings_score_zero(self, workspace, tmp_path, capsys):
        test = workspace["corpus"].test_speakers
        held = [e for e in load_manifest(workspace["corpus"].manifest_path) if e.speaker_id in test]
        emb = {e.utterance_id: np.eye(4)[test.index(e.speaker_id)] for e in held}
        np.savez(tmp_path / "emb.npz", **emb)
        assert main(args(workspace, "evaluate", "--speaker-embeddings", str(tmp_path / "emb.npz"))) == 0
        line = [x for x in capsys.readouterr().out.splitlines() if x.startswith("eer_speaker")][0]
        assert float(line.split("\t")[1]) == 0.0

    def test_transcripts_only(self, workspace, tmp_path, capsys):
        (tmp_path / "t.tsv").write_text("id\treference\thypothesis\nu1\tab cd\tab ce\n")
        assert main(args(workspace, "evaluate", "--transcripts", str(tmp_path / "t.tsv"), out=tmp_path)) == 0
        out = capsys.readouterr().out
        assert "cer\t0.2\t1" in out and "wer\t0.5\t1" in out


class TestExitCodes:
    def test_unknown_key(self, workspace):
        assert main(args(workspace, "--set", "cdsvae.loss.delta=1", "prepare")) == 1

    def test_bad_argument(self, workspace):
        assert main(["train", "nothing"]) == 1

    def test_malformed_yaml(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("seed: [1,\n")
        assert main(["--config", str(tmp_path / "bad.yaml"), "prepare"]) == 1

    def test_missing_manifest(self, tmp_path):
        assert main(["--out-dir", str(tmp_path), "prepare", "--manifest", str(tmp_path / "none.jsonl")]) == 1

    def test_unreadable_audio_is_stage_failure(self, tmp_path, capsys):
        (tmp_path / "x.wav").write_bytes(b"not audio")
        rec = {"utterance_id": "u0", "speaker_id": "s0", "audio_path": "x.wav"}
        (tmp_path / "m.jsonl").write_text(json.dumps(rec) + "\n")
        assert main(["--out-dir", str(tmp_path / "runs"), "prepare", "--manifest", str(tmp_path / "m.jsonl")]) == 2
        assert "prepare" in capsys.readouterr().err
