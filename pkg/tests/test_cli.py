import json

import pytest

from tdaudio.cli import fraction, fraction_list, main, parse_args
from tdaudio.evaluation import ClipRecord, load_manifest, save_manifest


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestParsing:
    def test_fractions(self):
        assert fraction("1/2") == 0.5 and fraction("0.25") == 0.25
        assert fraction_list("1/2,2/3") == [0.5, 2 / 3]

    def test_config_file_sets_defaults_and_flags_win(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": 7, "min_words": 2}))
        args = parse_args(["synth", "--out", "x", "--config", str(cfg), "--n", "3"])
        assert args.n == 3 and args.min_words == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code, _, err = run(capsys, "synth", "--out", tmp_path, "--config", cfg)
        assert code == 2 and "bogus" in json.loads(err)["message"]

    def test_usage_error_is_json(self, capsys):
        code, out, err = run(capsys, "detect", "--out", "x")
        assert code == 2 and out == ""
        assert json.loads(err)["error"] == "usage"

    def test_runtime_error_is_json(self, tmp_path, capsys):
        code, _, err = run(capsys, "eval", "--out", tmp_path, "--manifest", tmp_path / "missing.jsonl",
                           "--backend", "scripted", "--script", tmp_path / "missing.json")
        assert code == 1 and json.loads(err)["error"] == "ManifestError"


class TestPipeline:
    def test_synth_is_deterministic(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert run(capsys, "synth", "--out", tmp_path / d, "--n", 3, "--seed", 4)[0] == 0
        for name in ("manifest.jsonl", "wav/utt00000.wav", "wav/utt00002.wav"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert len(load_manifest(tmp_path / "a" / "manifest.jsonl")) == 3

    def test_small_end_to_end(self, tmp_path, capsys):
        assert run(capsys, "synth", "--out", tmp_path / "data", "--n", 4, "--min-words", 2,
                   "--max-words", 3)[0] == 0
        manifest = tmp_path / "data" / "manifest.jsonl"
        assert run(capsys, "train", "--out", tmp_path / "model", "--manifest", manifest,
                   "--epochs", 1)[0] == 0
        model = tmp_path / "model" / "model.json"
        code, out, _ = run(capsys, "attack", "--out", tmp_path / "adv", "--manifest", manifest,
                           "--model", model, "--iters", 3, "--c-schedule", "1,10")
        assert code == 0 and json.loads(out)["aggregates"]["clips"] == 4
        report = json.loads((tmp_path / "adv" / "attacks.json").read_text())
        assert report["attack_config"]["iterations"] == 3
        assert all((tmp_path / "adv" / r["wav"]).is_file() for r in report["rows"])

        # mixed manifest: the benign clips plus their attacked versions labelled adversarial
        benign = load_manifest(manifest)
        adv = [ClipRecord(r["id"] + "-adv", "../adv/" + r["wav"], "x", "adversarial", r["target"])
               for r in report["rows"]]
        save_manifest(benign + adv, tmp_path / "data" / "mixed.jsonl")
        code, out, err = run(capsys, "detect", "--out", tmp_path / "det", "--manifest",
                           tmp_path / "data" / "mixed.jsonl", "--model", model, "--k", "1/2,2/3")
        assert code == 0, err
        det = json.loads((tmp_path / "det" / "detection.json").read_text())
        assert [r["k_label"] for r in det["results"]] == ["0.5", "0.6667"]
        csv_lines = (tmp_path / "det" / "detection.csv").read_text().splitlines()
        assert csv_lines[0] == "id,k,metric,score,label"
        assert len(csv_lines) == 1 + 8 * 2 * 3

        code, _, _ = run(capsys, "eval", "--out", tmp_path / "ev", "--manifest", manifest, "--model", model,
                         "--transform", "quantize", "--q", 512)
        assert code == 0
        ev = json.loads((tmp_path / "ev" / "defense.json").read_text())
        assert ev["config"]["transform"] == {"kind": "quantize", "q": 512}
        assert ev["config"]["version"]

    def test_transform_and_autoencoder(self, tmp_path, capsys):
        run(capsys, "synth", "--out", tmp_path / "data", "--n", 3)
        manifest = tmp_path / "data" / "manifest.jsonl"
        assert run(capsys, "fit-autoencoder", "--out", tmp_path / "ae.json", "--manifest", manifest,
                   "--rank", 8)[0] == 0
        code, _, _ = run(capsys, "transform", "--out", tmp_path / "t", "--manifest", manifest,
                         "--transform", "autoencoder", "--autoencoder", tmp_path / "ae.json")
        assert code == 0
        assert len(load_manifest(tmp_path / "t" / "manifest.jsonl")) == 3

    def test_scripted_detect_with_relative_paths(self, tmp_path, capsys, monkeypatch):
        run(capsys, "synth", "--out", tmp_path / "data", "--n", 2)
        recs = load_manifest(tmp_path / "data" / "manifest.jsonl")
        recs.append(ClipRecord("z", recs[0].path, "a b", "adversarial", "c d"))
        save_manifest(recs, tmp_path / "data" / "m.jsonl")
        script = {r.id: "ab cd" for r in recs}
        script.update({r.id + "#prefix": "ab" for r in recs})
        script["z#prefix"] = "ef"
        (tmp_path / "script.json").write_text(json.dumps(script))
        monkeypatch.chdir(tmp_path)
        code, out, _ = run(capsys, "detect", "--out", "det", "--manifest", "data/m.jsonl",
                           "--backend", "scripted", "--script", "script.json")
        assert code == 0
        assert json.loads(out)["results"][0]["auc"]["wer"] == 1.0
