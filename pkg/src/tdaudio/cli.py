"""Command-line pipeline: synth -> train -> attack -> transform -> detect / eval.

Every subcommand writes its outputs under ``--out`` and echoes its resolved
configuration into the report it writes. Failures exit nonzero with a JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, AttackSetupError, run_attack
from .audio_io import write_wav
from .backends import AsrBackendSpec, make_backend
from .evaluation import (
    DETECTION_CSV,
    ClipRecord,
    combination_matrix,
    detection_csv_rows,
    dumps_report,
    load_clip,
    load_manifest,
    run_defense_eval,
    run_detection_eval,
    save_manifest,
    write_report,
    write_rows_csv,
)
from .td import METRICS, TRUNCATIONS, TdConfig
from .toy_asr.model import ToyAsrModel
from .toy_asr.synth import SynthesisSpec, make_corpus, random_sentence, synthesize
from .toy_asr.train import TrainConfig, train_on_waves
from .transforms import TRANSFORM_KINDS, FrameAutoencoder, TransformSpec, apply_transform, autoencoder_fit

log = logging.getLogger("tdaudio")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def fraction(text: str) -> float:
    """'1/2' or '0.5' -> 0.5."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a fraction: {text!r}") from None


def fraction_list(text: str) -> list[float]:
    return [fraction(t) for t in text.split(",") if t.strip()]


def float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


# -- shared option groups ----------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file of option defaults (flags win)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("-v", "--verbose", action="store_true")


def _backend_opts(p):
    p.add_argument("--backend", choices=("toy", "command", "http", "scripted"), default="toy")
    p.add_argument("--model", help="toy model file")
    p.add_argument("--command", help="command template containing {wav}")
    p.add_argument("--url", help="HTTP endpoint")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--script", help="JSON file mapping clip id to transcript")
    p.add_argument("--max-in-flight", type=int, default=4)


def _transform_opts(p):
    p.add_argument("--transform", choices=TRANSFORM_KINDS, default="identity")
    p.add_argument("--q", type=int, default=256)
    p.add_argument("--smooth-kind", choices=("average", "median"), default="median")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--autoencoder", help="fitted frame autoencoder file")


def _k_opts(p, default):
    p.add_argument("--k", type=fraction_list, default=default,
                   help="comma-separated fractions, e.g. 1/2,2/3")
    p.add_argument("--k-rand", type=fraction, nargs=2, metavar=("A", "B"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tdaudio", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a tone-speech corpus")
    _common(p)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--min-words", type=int, default=3)
    p.add_argument("--max-words", type=int, default=8)

    p = sub.add_parser("train", help="train the toy recognizer on a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("attack", help="craft adversarial examples for a benign manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", help="fixed target phrase (default: random per clip)")
    p.add_argument("--target-words", type=int, default=2)
    p.add_argument("--c-schedule", type=float_list, default=[0.1, 1.0, 10.0, 100.0])
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--step", type=float, default=0.002)
    p.add_argument("--adaptive", choices=("none", "quantize", "downsample", "smooth"), default="none")
    p.add_argument("--variant", choices=("plain", "segment", "concat_split", "concat_silence",
                                         "combination"), default="plain")
    p.add_argument("--q", type=int, default=256)
    p.add_argument("--smooth-kind", choices=("average", "median"), default="median")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--factor", type=int, default=2)
    _k_opts(p, [0.5])

    p = sub.add_parser("transform", help="apply a defense to every clip of a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    _transform_opts(p)

    p = sub.add_parser("fit-autoencoder", help="fit the frame autoencoder on a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--rank", type=int, default=32)

    p = sub.add_parser("detect", help="temporal-dependency detection and AUC")
    _common(p)
    p.add_argument("--manifest", required=True)
    _backend_opts(p)
    _k_opts(p, [0.5])
    p.add_argument("--metric", choices=METRICS, default="wer")
    p.add_argument("--truncation", choices=TRUNCATIONS, default="auto")
    p.add_argument("--matrix", action="append", default=[], metavar="NAME=MANIFEST",
                   help="adversarial manifest per attack set; --manifest then supplies benign clips")

    p = sub.add_parser("eval", help="transcription distances before and after a defense")
    _common(p)
    p.add_argument("--manifest", required=True)
    _backend_opts(p)
    _transform_opts(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.subcommand]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.workers < 1:
        raise CliError("--workers must be >= 1")
    return args


def resolved(args) -> dict:
    """The full option set of this run, for the report."""
    d = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    d["version"] = __version__
    return d


# -- subcommands --------------------------------------------------------------------

def _manifest(args):
    path = Path(args.manifest)
    return load_manifest(path), path.parent


def _write_json(obj, path):
    Path(path).write_text(dumps_report(obj), encoding="utf-8")


def cmd_synth(args) -> dict:
    out = Path(args.out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for i, (text, seed) in enumerate(make_corpus(args.n, args.seed, args.min_words, args.max_words)):
        uid = f"utt{i:05d}"
        write_wav(synthesize(text, SynthesisSpec(seed=seed), id=uid), out / "wav" / f"{uid}.wav")
        records.append(ClipRecord(uid, f"wav/{uid}.wav", text))
    save_manifest(records, out / "manifest.jsonl")
    report = {"kind": "synth", "config": resolved(args), "clips": len(records)}
    _write_json(report, out / "synth.json")
    return report


def cmd_train(args) -> dict:
    records, base = _manifest(args)
    if not records:
        raise CliError("training manifest is empty")
    waves = [load_clip(r, base).to_real().values for r in records]
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    model = train_on_waves([r.ground_truth for r in records], waves, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    report = {"kind": "train", "config": resolved(args), "train_config": cfg.to_dict(),
              "clips": len(records), "loss_history": model.history}
    _write_json(report, out / "train.json")
    return report


def _attack_config(args, target) -> AttackConfig:
    adaptive = None
    if args.adaptive != "none":
        adaptive = TransformSpec(args.adaptive, q=args.q, smooth_kind=args.smooth_kind,
                                 K=args.K, factor=args.factor)
    k = args.k[0] if args.k else 0.5
    return AttackConfig(target, tuple(args.c_schedule), args.iters, args.step, adaptive, args.variant,
                        k=k, k_A=tuple(args.k or [0.5]), k_rand=tuple(args.k_rand) if args.k_rand else None,
                        seed=args.seed)


_WORKER_MODEL = None


def _init_worker(path):
    global _WORKER_MODEL
    _WORKER_MODEL = ToyAsrModel.load(path)


def _attack_job(job):
    rec, base, cfg = job
    clip = load_clip(rec, base)
    try:
        return run_attack(_WORKER_MODEL, clip, cfg)
    except (AttackSetupError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


def cmd_attack(args) -> dict:
    records, base = _manifest(args)
    rng = np.random.default_rng(args.seed)
    jobs = []
    for rec in records:
        target = args.target if args.target else random_sentence(rng, args.target_words, args.target_words)
        jobs.append((rec, base, _attack_config(args, target)))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers, initializer=_init_worker, initargs=(args.model,)) as pool:
            results = list(pool.map(_attack_job, jobs))
    else:
        _init_worker(args.model)
        results = [_attack_job(j) for j in jobs]
    out = Path(args.out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rows, adv_records = [], []
    for (rec, _, cfg), res in zip(jobs, results):
        if isinstance(res, str):
            rows.append({"id": rec.id, "target": cfg.target, "success": False, "error": res})
            continue
        row = res.to_record()
        row["error"] = None
        uid = f"{rec.id}-adv"
        write_wav(res.adversarial.with_samples(res.adversarial.samples, uid), out / "wav" / f"{uid}.wav")
        row["wav"] = f"wav/{uid}.wav"
        rows.append(row)
        if res.success:
            adv_records.append(ClipRecord(uid, row["wav"], rec.ground_truth, "adversarial", res.target))
    save_manifest(adv_records, out / "manifest.jsonl")
    ok = [r for r in rows if r["success"]]
    dbs = [r["db"] for r in ok if np.isfinite(r["db"])]
    report = {"kind": "attack", "config": resolved(args),
              "attack_config": _attack_config(args, args.target or "").describe(),
              "rows": rows,
              "aggregates": {"clips": len(rows), "failed": sum(r["error"] is not None for r in rows),
                             "success_rate": len(ok) / len(rows) if rows else None,
                             "median_db": statistics.median(dbs) if dbs else None}}
    _write_json(report, out / "attacks.json")
    return report


def _transform_spec(args) -> TransformSpec:
    return TransformSpec(args.transform, q=args.q, smooth_kind=args.smooth_kind, K=args.K,
                         factor=args.factor, rank=args.rank, autoencoder_path=args.autoencoder)


def cmd_transform(args) -> dict:
    records, base = _manifest(args)
    spec = _transform_spec(args)
    ae = FrameAutoencoder.load(args.autoencoder) if spec.kind == "autoencoder" else None
    out = Path(args.out)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    new = []
    for rec in records:
        clip = apply_transform(load_clip(rec, base), spec, ae)
        path = f"wav/{rec.id}.wav"
        write_wav(clip, out / path)
        new.append(ClipRecord(rec.id, path, rec.ground_truth, rec.label, rec.adversarial_target))
    save_manifest(new, out / "manifest.jsonl")
    report = {"kind": "transform", "config": resolved(args), "transform": spec.describe(), "clips": len(new)}
    _write_json(report, out / "transform.json")
    return report


def cmd_fit_autoencoder(args) -> dict:
    records, base = _manifest(args)
    ae = autoencoder_fit([load_clip(r, base) for r in records], args.rank)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ae.save(out)
    return {"kind": "fit-autoencoder", "config": resolved(args), "rank": ae.rank}


def _backend(args):
    script = {}
    if args.backend == "scripted":
        if not args.script:
            raise CliError("scripted backend needs --script")
        script = json.loads(Path(args.script).read_text(encoding="utf-8"))
    spec = AsrBackendSpec(args.backend, model_path=args.model, command=args.command, url=args.url,
                          timeout=args.timeout, script=script, max_in_flight=args.max_in_flight)
    return spec, make_backend(spec)


def _td_configs(args) -> list[TdConfig]:
    if args.k_rand:
        return [TdConfig(k_rand=tuple(args.k_rand), metric=args.metric, truncation=args.truncation,
                         seed=args.seed)]
    return [TdConfig(k=k, metric=args.metric, truncation=args.truncation, seed=args.seed) for k in args.k]


def cmd_detect(args) -> dict:
    records, base = _manifest(args)
    spec, backend = _backend(args)
    cfgs = _td_configs(args)
    config = dict(resolved(args), backend_spec=spec.describe())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.matrix:
        benign = [r for r in records if r.label == "benign"]
        sets = {}
        for item in args.matrix:
            name, _, path = item.partition("=")
            if not path:
                raise CliError(f"--matrix expects NAME=MANIFEST, got {item!r}")
            adv = [r for r in load_manifest(path) if r.label == "adversarial"]
            sets[name] = [ClipRecord(r.id, str(Path(path).parent / r.path), r.ground_truth, r.label,
                                     r.adversarial_target) for r in adv]
        benign = [ClipRecord(r.id, str(base / r.path), r.ground_truth) for r in benign]
        matrix = combination_matrix(backend, benign, sets, cfgs, None, args.workers)
        report = {"kind": "matrix", "config": config, "metric": args.metric,
                  "matrix": {name: {k: row[args.metric] for k, row in ks.items()}
                             for name, ks in matrix.items()},
                  "auc": matrix}
        write_report(report, out / "matrix.json")
        return report
    report = run_detection_eval(backend, cfgs, records, base, args.workers, config)
    write_report(report, out / "detection.json")
    write_rows_csv(list(detection_csv_rows(report)), DETECTION_CSV, out / "detection.csv")
    return report


def cmd_eval(args) -> dict:
    records, base = _manifest(args)
    spec, backend = _backend(args)
    transform = _transform_spec(args)
    ae = FrameAutoencoder.load(args.autoencoder) if transform.kind == "autoencoder" else None
    config = dict(resolved(args), backend_spec=spec.describe())
    report = run_defense_eval(backend, transform, records, base, ae, args.workers, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "defense.json")
    cols = ("id", "label", "ground_truth", "before", "after", "wer_before", "wer_after",
            "cer_before", "cer_after", "error")
    write_rows_csv(report["rows"], cols, out / "defense.csv")
    return report


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "transform": cmd_transform,
    "fit-autoencoder": cmd_fit_autoencoder,
    "detect": cmd_detect,
    "eval": cmd_eval,
}


def _summary(report: dict) -> dict:
    keep = ("kind", "clips", "aggregates", "results", "matrix", "rank")
    s = {k: report[k] for k in keep if k in report}
    if "results" in s:
        s["results"] = [{k: v for k, v in r.items() if not k.startswith("median_")} for r in s["results"]]
    return s


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        report = COMMANDS[args.subcommand](args)
    except CliError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        log.debug("failure", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(dumps_report(_summary(report)), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
