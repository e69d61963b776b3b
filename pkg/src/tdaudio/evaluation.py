"""Manifests, ROC/AUC, defense and detection evaluation, and report writing."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from statistics import median

from .audio_io import AudioClip, WavError, read_wav
from .backends import TranscriptionError, transcribe_batch
from .td import METRICS, DegeneratePrefixError, TdConfig, td_from_transcripts, split_prefix
from .text_metrics import UndefinedRatioError, cer, effectiveness_ratio, normalize_text, wer
from .transforms import TransformSpec, apply_transform

LABELS = ("benign", "adversarial")
FLOAT_DIGITS = 10


class ManifestError(ValueError):
    pass


class SingleClassError(ValueError):
    pass


class ReportConsistencyError(AssertionError):
    pass


# -- manifests ---------------------------------------------------------------------

@dataclass(frozen=True)
class ClipRecord:
    id: str
    path: str
    ground_truth: str
    label: str = "benign"
    adversarial_target: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("empty clip id")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if not normalize_text(self.ground_truth):
            raise ValueError("ground_truth must be non-empty")
        if self.label == "benign" and self.adversarial_target is not None:
            raise ValueError("benign records carry no adversarial_target")

    @property
    def is_adversarial(self) -> int:
        return int(self.label == "adversarial")

    def to_dict(self) -> dict:
        d = {"id": self.id, "path": self.path, "ground_truth": self.ground_truth, "label": self.label}
        if self.adversarial_target is not None:
            d["adversarial_target"] = self.adversarial_target
        return d


def load_manifest(path) -> list[ClipRecord]:
    """JSON lines of ClipRecord fields; blank lines are skipped, unknown keys ignored."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} does not exist")
    records, seen = [], set()
    for no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise ValueError("not a JSON object")
            missing = [k for k in ("id", "path", "ground_truth") if k not in d]
            if missing:
                raise ValueError(f"missing {', '.join(missing)}")
            rec = ClipRecord(str(d["id"]), str(d["path"]), str(d["ground_truth"]),
                             d.get("label", "benign"), d.get("adversarial_target"))
        except ValueError as exc:
            raise ManifestError(f"{path}:{no}: {exc}") from None
        if rec.id in seen:
            raise ManifestError(f"{path}:{no}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def save_manifest(records, path) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def resolve(record: ClipRecord, base_dir) -> Path:
    p = Path(record.path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def load_clip(record: ClipRecord, base_dir=None) -> AudioClip:
    return read_wav(resolve(record, base_dir), id=record.id)


# -- ROC / AUC -----------------------------------------------------------------------

def _split(records):
    pairs = [(s, int(l)) for s, l in records]
    if not any(l == 1 for _, l in pairs) or not any(l == 0 for _, l in pairs):
        raise SingleClassError("need at least one record of each label")
    return pairs


def auc(records) -> float:
    """Mann-Whitney AUC over (score, label) pairs, label 1 = adversarial; ties count half."""
    pairs = _split(records)
    ordered = sorted(pairs, key=lambda p: p[0])
    rank_sum = Fraction(0)
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j][0] == ordered[i][0]:
            j += 1
        mid = Fraction(i + 1 + j, 2)  # average of ranks i+1 .. j
        rank_sum += mid * sum(l for _, l in ordered[i:j])
        i = j
    n1 = sum(l for _, l in pairs)
    n0 = len(pairs) - n1
    return float((rank_sum - Fraction(n1 * (n1 + 1), 2)) / (n1 * n0))


def roc_curve(records) -> list[tuple[float, float]]:
    """(FPR, TPR) staircase, one threshold per distinct score, from (0,0) to (1,1)."""
    pairs = _split(records)
    n1 = sum(l for _, l in pairs)
    n0 = len(pairs) - n1
    ordered = sorted(pairs, key=lambda p: -p[0])
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j][0] == ordered[i][0]:
            tp += ordered[j][1]
            fp += 1 - ordered[j][1]
            j += 1
        points.append((fp / n0, tp / n1))
        i = j
    return points


def trapezoid_area(points) -> float:
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(points, points[1:]))


def detection_rate(records, threshold: float = 0.0) -> float | None:
    """Fraction of adversarial records scoring strictly above ``threshold``."""
    adv = [s for s, l in records if int(l) == 1]
    if not adv:
        return None
    return sum(s > threshold for s in adv) / len(adv)


# -- report plumbing -----------------------------------------------------------------

def _clean(obj):
    """Fixed float precision and JSON-safe non-finite values."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return round(obj, FLOAT_DIGITS)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def write_report(report: dict, path) -> None:
    check_report(report)
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def write_rows_csv(rows, columns, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row.get(c) is None else _clean(row.get(c)) for c in columns])


def check_report(report: dict) -> None:
    """Recompute the aggregates from the rows; raise if anything disagrees."""
    kind = report.get("kind")
    if kind == "defense":
        again = defense_aggregates(report["rows"])
    elif kind == "detection":
        again = detection_aggregates(report["rows"], [r["k_label"] for r in report["results"]])
    else:
        return
    key = "aggregates" if kind == "defense" else "results"
    if dumps_report(again) != dumps_report(report[key]):
        raise ReportConsistencyError(f"{kind} report aggregates do not match its rows")


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _load_all(records, base_dir, workers):
    def one(rec):
        try:
            return load_clip(rec, base_dir)
        except (OSError, WavError) as exc:
            return f"unreadable-wav: {type(exc).__name__}: {exc}"
    return _map(one, records, workers)


def _failure(rec, reason):
    return {"id": rec.id, "label": rec.label, "error": reason}


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def _ratio(after, before):
    if after is None or before is None:
        return None
    if after == before:
        return 1.0
    try:
        return effectiveness_ratio(after, before)
    except UndefinedRatioError:
        return None


# -- defense evaluation ----------------------------------------------------------------

def defense_aggregates(rows) -> dict:
    out = {}
    for label in LABELS:
        ok = [r for r in rows if r["label"] == label and r.get("error") is None]
        agg = {"clips": len(ok)}
        for m in ("wer", "cer"):
            before = _mean([r[f"{m}_before"] for r in ok])
            after = _mean([r[f"{m}_after"] for r in ok])
            agg[f"mean_{m}_before"] = before
            agg[f"mean_{m}_after"] = after
            agg[f"ratio_{m}"] = _ratio(after, before)
        if label == "adversarial":
            agg["attack_success_before"] = _mean([float(r["target_hit_before"]) for r in ok])
            agg["attack_success_after"] = _mean([float(r["target_hit_after"]) for r in ok])
        out[label] = agg
    out["failed"] = sum(1 for r in rows if r.get("error") is not None)
    return out


def run_defense_eval(backend, transform: TransformSpec, records, base_dir=None, ae=None,
                     workers: int = 1, config: dict | None = None) -> dict:
    """Distances to the ground truth before and after ``transform``.

    Ratios are corpus level: mean distance after over mean distance before.
    """
    records = sorted(records, key=lambda r: r.id)
    loaded = _load_all(records, base_dir, workers)
    rows, todo = [], []
    for rec, clip in zip(records, loaded):
        if isinstance(clip, str):
            rows.append(_failure(rec, clip))
            continue
        try:
            todo.append((rec, clip, apply_transform(clip, transform, ae)))
        except ValueError as exc:
            rows.append(_failure(rec, f"transform-failed: {exc}"))
    flat = [c for _, x, t in todo for c in (x, t)]
    texts = [t for _, t in transcribe_batch(backend, flat, workers)]
    for i, (rec, _, _) in enumerate(todo):
        before, after = texts[2 * i], texts[2 * i + 1]
        bad = next((t for t in (before, after) if isinstance(t, TranscriptionError)), None)
        if bad is not None:
            rows.append(_failure(rec, f"transcription-failed: {type(bad).__name__}: {bad}"))
            continue
        gt = normalize_text(rec.ground_truth)
        row = {"id": rec.id, "label": rec.label, "ground_truth": gt, "before": before, "after": after,
               "wer_before": wer(gt, before), "wer_after": wer(gt, after),
               "cer_before": cer(gt, before), "cer_after": cer(gt, after), "error": None}
        if rec.label == "adversarial":
            target = normalize_text(rec.adversarial_target or "")
            row.update(target=target, target_hit_before=before == target, target_hit_after=after == target)
        rows.append(row)
    rows.sort(key=lambda r: r["id"])
    return {"kind": "defense", "config": dict(config or {}, transform=transform.describe()),
            "rows": rows, "aggregates": defense_aggregates(rows)}


# -- detection evaluation -----------------------------------------------------------------

def _median_or_none(xs):
    return median(xs) if xs else None


def _safe_auc(pairs):
    try:
        return auc(pairs)
    except SingleClassError:
        return None


def detection_aggregates(rows, k_labels) -> list[dict]:
    results = []
    for kl in k_labels:
        ok = [r for r in rows if r["k_label"] == kl and r.get("error") is None]
        res = {"k_label": kl, "clips": len(ok),
               "failed": sum(1 for r in rows if r["k_label"] == kl and r.get("error") is not None),
               "auc": {}, "detection_rate": {}, "median_benign": {}, "median_adversarial": {}}
        for m in METRICS:
            pairs = [(r["distances"][m], r["is_adversarial"]) for r in ok]
            res["auc"][m] = _safe_auc(pairs)
            res["detection_rate"][m] = detection_rate(pairs, 0.0)
            res["median_benign"][m] = _median_or_none([s for s, l in pairs if l == 0])
            res["median_adversarial"][m] = _median_or_none([s for s, l in pairs if l == 1])
        results.append(res)
    return results


def detection_rows(backend, cfgs, records, base_dir=None, workers: int = 1) -> list[dict]:
    """Per (clip, k) TD rows; the whole-clip transcript is shared across k values."""
    records = sorted(records, key=lambda r: r.id)
    loaded = _load_all(records, base_dir, workers)
    rows = []
    good = [(rec, clip) for rec, clip in zip(records, loaded) if not isinstance(clip, str)]
    for rec, clip in zip(records, loaded):
        if isinstance(clip, str):
            rows.extend(dict(_failure(rec, clip), k_label=c.label) for c in cfgs)
    wholes = dict(transcribe_batch(backend, [c for _, c in good], workers))
    jobs = []
    for cfg in cfgs:
        for rec, clip in good:
            k = cfg.k_for(rec.id)
            try:
                jobs.append((cfg, rec, k, split_prefix(clip, k)))
            except DegeneratePrefixError as exc:
                rows.append(dict(_failure(rec, f"degenerate-prefix: {exc}"), k_label=cfg.label))
    prefixes = transcribe_batch(backend, [p for *_, p in jobs], workers)
    for (cfg, rec, k, _), (_, s_k) in zip(jobs, prefixes):
        whole = wholes[rec.id]
        bad = next((t for t in (whole, s_k) if isinstance(t, TranscriptionError)), None)
        if bad is not None:
            rows.append(dict(_failure(rec, f"transcription-failed: {type(bad).__name__}: {bad}"),
                             k_label=cfg.label))
            continue
        out = td_from_transcripts(rec.id, k, s_k, whole, cfg)
        rows.append({"id": rec.id, "label": rec.label, "is_adversarial": rec.is_adversarial,
                     "k_label": cfg.label, "k": k, "s_k": out.s_k, "whole": out.whole,
                     "s_whole_k": out.s_whole_k, "distances": out.distances, "error": None})
    rows.sort(key=lambda r: (r["k_label"], r["id"]))
    return rows


def run_detection_eval(backend, cfgs, records, base_dir=None, workers: int = 1,
                       config: dict | None = None) -> dict:
    """TD scores for every config in ``cfgs`` (a k sweep, or a single entry) and AUC per metric."""
    if isinstance(cfgs, TdConfig):
        cfgs = [cfgs]
    rows = detection_rows(backend, cfgs, records, base_dir, workers)
    return {"kind": "detection",
            "config": dict(config or {}, td=[c.describe() for c in cfgs]),
            "rows": rows, "results": detection_aggregates(rows, [c.label for c in cfgs])}


def combination_matrix(backend, benign, attack_sets: dict, cfgs, base_dir=None, workers: int = 1) -> dict:
    """AUC of each attack set (vs the shared benign clips) under each detector k.

    Returns {attack set name: {k label: {metric: auc}}}.
    """
    out = {}
    for name in sorted(attack_sets):
        rep = run_detection_eval(backend, cfgs, list(benign) + list(attack_sets[name]), base_dir, workers)
        out[name] = {r["k_label"]: r["auc"] for r in rep["results"]}
    return out


DETECTION_CSV = ("id", "k", "metric", "score", "label")


def detection_csv_rows(report: dict):
    for r in report["rows"]:
        if r.get("error") is not None:
            continue
        for m in METRICS:
            yield {"id": r["id"], "k": r["k"], "metric": m, "score": r["distances"][m], "label": r["label"]}
