"""Manifest ingestion, split hygiene, metrics, and the experiment grid.

Manifests are JSON Lines: one record per line with named fields
path, intent, action, object, speaker_id, split, duration_s. Intent must
be the canonical "<object>_<action>" join and every label must come from
the 20-intent taxonomy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio_io import MODEL_WINDOW_SAMPLES, fit_length, read_wav
from .augment import AugmentParams, augment_triplet
from .dsp_frontend import FrontendConfig, mfcc
from .errors import (
    ConfigInvalid, EmptySplit, InconsistentSlots, MalformedRecord, UnknownLabel,
)
from .labels import CANONICAL
from .nn.model import ModelGraph, batch_probs
from .nn.training import TrainConfig, train
from .nn import build_model, count_params

SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ("path", "intent", "action", "object", "speaker_id", "split", "duration_s")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    intent: str
    action: str
    object: str
    speaker_id: str
    split: str
    duration_s: float


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]

    def for_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def __len__(self) -> int:
        return len(self.records)


def validate_record(raw: dict, lineno: int = 0) -> ManifestRecord:
    missing = [f for f in MANIFEST_FIELDS if f not in raw]
    if missing:
        raise MalformedRecord(f"line {lineno}: missing fields {missing}")
    if raw["split"] not in SPLITS:
        raise MalformedRecord(f"line {lineno}: split {raw['split']!r} not in {SPLITS}")
    obj, action, intent = raw["object"], raw["action"], raw["intent"]
    if obj not in CANONICAL.object_index:
        raise UnknownLabel(f"line {lineno}: unknown object {obj!r}")
    if action not in CANONICAL.action_index:
        raise UnknownLabel(f"line {lineno}: unknown action {action!r}")
    if intent not in CANONICAL.intent_index:
        raise UnknownLabel(f"line {lineno}: intent {intent!r} not in the 20-label set")
    if intent != f"{obj}_{action}":
        raise InconsistentSlots(
            f"line {lineno}: intent {intent!r} != join of ({obj!r}, {action!r})"
        )
    try:
        duration = float(raw["duration_s"])
    except (TypeError, ValueError):
        raise MalformedRecord(f"line {lineno}: duration_s not a number") from None
    return ManifestRecord(str(raw["path"]), intent, action, obj,
                          str(raw["speaker_id"]), raw["split"], duration)


def load_manifest(path) -> Manifest:
    """Parse and validate a JSONL manifest; an empty file is an empty manifest."""
    records = []
    with open(str(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"line {lineno}: not valid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise MalformedRecord(f"line {lineno}: record must be an object")
            records.append(validate_record(raw, lineno))
    return Manifest(tuple(records))


def save_manifest(path, manifest: Manifest) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps({
                "path": r.path, "intent": r.intent, "action": r.action,
                "object": r.object, "speaker_id": r.speaker_id,
                "split": r.split, "duration_s": r.duration_s,
            }) + "\n")


@dataclass(frozen=True)
class SplitReport:
    speakers: dict[str, set]
    train_test_overlap: set
    val_test_overlap: set
    empty_splits: tuple[str, ...]

    @property
    def speaker_disjoint(self) -> bool:
        return not self.train_test_overlap and not self.val_test_overlap

    def render(self) -> str:
        lines = []
        for split in SPLITS:
            lines.append(f"{split}: {len(self.speakers[split])} speakers")
        lines.append(f"train/test speaker overlap: {sorted(self.train_test_overlap)}")
        lines.append(f"val/test speaker overlap: {sorted(self.val_test_overlap)}")
        if self.empty_splits:
            lines.append(f"WARNING: empty splits: {list(self.empty_splits)}")
        lines.append("OK: test speakers unseen in training" if self.speaker_disjoint
                     else "VIOLATION: test speakers leak into train or val")
        return "\n".join(lines)


def split_check(manifest: Manifest) -> SplitReport:
    """Speaker sets per split and train/test, val/test overlaps."""
    speakers = {s: {r.speaker_id for r in manifest.for_split(s)} for s in SPLITS}
    return SplitReport(
        speakers=speakers,
        train_test_overlap=speakers["train"] & speakers["test"],
        val_test_overlap=speakers["val"] & speakers["test"],
        empty_splits=tuple(s for s in SPLITS if not speakers[s]),
    )


# --- feature extraction ---

@dataclass
class FeatureSet:
    """Feature tensors plus per-head label indices for one split."""

    x: np.ndarray                      # (N, T, n_mfcc, 1) float32
    y: dict[str, np.ndarray]           # head -> int label indices
    clip_count: int
    feature_count: int


def _labels_for(record: ManifestRecord, heads: str) -> dict[str, int]:
    if heads == "single_intent":
        return {"intent": CANONICAL.intent_index[record.intent]}
    return {"action": CANONICAL.action_index[record.action],
            "object": CANONICAL.object_index[record.object]}


def extract_features(manifest: Manifest, split: str, cfg: FrontendConfig, *,
                     heads: str = "single_intent", augment: bool = False,
                     augment_params: AugmentParams | None = None,
                     window_samples: int = MODEL_WINDOW_SAMPLES) -> FeatureSet:
    """Read clips of one split and turn them into model-ready features.

    With augment=True every clip becomes its three-way expansion; the
    labels replicate accordingly. Augmentation is intended for the train
    split only.
    """
    records = manifest.for_split(split)
    if not records:
        raise EmptySplit(f"split {split!r} has no records")
    params = augment_params or AugmentParams()
    xs, ys = [], []
    for i, record in enumerate(records):
        clip = read_wav(record.path).require_rate()
        clip = fit_length(clip, window_samples)
        variants = (augment_triplet(clip, AugmentParams(params.snr_db, params.semitones,
                                                        params.seed + i))
                    if augment else [clip])
        labels = _labels_for(record, heads)
        for v in variants:
            xs.append(mfcc(v, cfg).values.astype(np.float32))
            ys.append(labels)
    x = np.stack(xs)[:, :, :, None]
    y = {h: np.array([lab[h] for lab in ys], dtype=np.int64) for h in ys[0]}
    return FeatureSet(x=x, y=y, clip_count=len(records), feature_count=len(xs))


# --- metrics ---

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    mean_loss: float
    confusion: np.ndarray              # (n_intents, n_intents), rows = truth
    action_accuracy: float | None = None
    object_accuracy: float | None = None

    def confusion_csv(self, labels: tuple[str, ...]) -> str:
        lines = ["label," + ",".join(labels)]
        for name, row in zip(labels, self.confusion):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines)


def _mean_ce(probs: np.ndarray, y: np.ndarray) -> float:
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-30))))


def evaluate_features(model: ModelGraph, features: FeatureSet) -> Metrics:
    """Accuracy, mean cross-entropy, and confusion matrix on prepared features."""
    probs = batch_probs(model, features.x)
    if model.heads == "single_intent":
        labels = model.label_maps["intent"]
        y = features.y["intent"]
        pred = np.argmax(probs["intent"], axis=1)
        loss = _mean_ce(probs["intent"], y)
        n = len(labels)
        confusion = np.zeros((n, n), dtype=np.int64)
        np.add.at(confusion, (y, pred), 1)
        return Metrics(float(np.mean(pred == y)), loss, confusion)

    a_pred = np.argmax(probs["action"], axis=1)
    o_pred = np.argmax(probs["object"], axis=1)
    a_y, o_y = features.y["action"], features.y["object"]
    loss = _mean_ce(probs["action"], a_y) + _mean_ce(probs["object"], o_y)
    # Joint confusion over composed intents; unseen compositions land
    # outside the canonical 20 and are counted in the truth row diagonal
    # only when the pair is exact.
    n = len(CANONICAL.intents)
    confusion = np.zeros((n, n), dtype=np.int64)
    actions, objects = model.label_maps["action"], model.label_maps["object"]
    for ai, oi, at, ot in zip(a_pred, o_pred, a_y, o_y):
        true_intent = f"{objects[ot]}_{actions[at]}"
        pred_intent = f"{objects[oi]}_{actions[ai]}"
        ti = CANONICAL.intent_index[true_intent]
        pi = CANONICAL.intent_index.get(pred_intent)
        if pi is not None:
            confusion[ti, pi] += 1
    exact = (a_pred == a_y) & (o_pred == o_y)
    return Metrics(float(np.mean(exact)), loss, confusion,
                   action_accuracy=float(np.mean(a_pred == a_y)),
                   object_accuracy=float(np.mean(o_pred == o_y)))


def evaluate(model: ModelGraph, manifest: Manifest, split: str) -> Metrics:
    """Per-clip prediction over a manifest split (no augmentation)."""
    features = extract_features(manifest, split, model.frontend,
                                heads=model.heads,
                                window_samples=model.window_samples)
    return evaluate_features(model, features)


# --- experiment grid ---

@dataclass(frozen=True)
class ExperimentSpec:
    exp_id: str
    n_mfcc: int
    augment: bool
    arch_variant: str


def experiment_grid(grid_id: str) -> list[ExperimentSpec]:
    """The two published grids: 8 specs for "rpi", 4 (10-MFCC only) for "wio"."""
    if grid_id == "wio":
        ids = ["A", "B", "C", "D"]
        combos = [(10, False, "gmp"), (10, True, "gmp"),
                  (10, False, "flatten"), (10, True, "flatten")]
    elif grid_id == "rpi":
        ids = [str(i) for i in range(1, 9)]
        combos = [(10, False, "gmp"), (10, True, "gmp"),
                  (10, False, "flatten"), (10, True, "flatten"),
                  (13, False, "gmp"), (13, True, "gmp"),
                  (13, False, "flatten"), (13, True, "flatten")]
    else:
        raise ConfigInvalid(f"unknown grid {grid_id!r} (expected 'rpi' or 'wio')")
    return [ExperimentSpec(i, n, a, v) for i, (n, a, v) in zip(ids, combos)]


def run_experiment_grid(grid_id: str, manifest: Manifest,
                        train_cfg: TrainConfig | None = None, *,
                        heads: str = "single_intent",
                        augment_params: AugmentParams | None = None,
                        window_samples: int = MODEL_WINDOW_SAMPLES,
                        progress=None) -> list[dict]:
    """Train and evaluate every spec in a grid; one result row per experiment.

    Rows carry the published table's columns (exp, n_mfcc, augmentation,
    architecture, accuracy, test_loss, parameters) plus bookkeeping fields
    train_clip_count / train_feature_count.
    """
    cfg = train_cfg or TrainConfig()
    rows = []
    for spec in experiment_grid(grid_id):
        frontend = FrontendConfig(n_mfcc=spec.n_mfcc)
        train_set = extract_features(manifest, "train", frontend, heads=heads,
                                     augment=spec.augment,
                                     augment_params=augment_params,
                                     window_samples=window_samples)
        val_set = extract_features(manifest, "val", frontend, heads=heads,
                                   window_samples=window_samples)
        test_set = extract_features(manifest, "test", frontend, heads=heads,
                                    window_samples=window_samples)
        model = build_model(spec.arch_variant, spec.n_mfcc, heads,
                            frontend=frontend, window_samples=window_samples,
                            seed=cfg.seed)
        model, _history = train(model, train_set.x, train_set.y,
                                val_set.x, val_set.y, cfg)
        metrics = evaluate_features(model, test_set)
        row = {
            "exp": spec.exp_id,
            "n_mfcc": spec.n_mfcc,
            "augmentation": "with" if spec.augment else "without",
            "architecture": ("Global Max Pooling" if spec.arch_variant == "gmp"
                             else "Flattening"),
            "accuracy": metrics.accuracy,
            "test_loss": metrics.mean_loss,
            "parameters": count_params(model),
            "train_clip_count": train_set.clip_count,
            "train_feature_count": train_set.feature_count,
        }
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def render_grid_table(rows: list[dict]) -> str:
    header = (f"{'Exp':<4} {'MFCCs':>5} {'Augmentation':<12} {'Architecture':<18} "
              f"{'Accuracy(%)':>11} {'Test Loss':>9} {'Parameters':>10}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['exp']:<4} {r['n_mfcc']:>5} {r['augmentation']:<12} "
            f"{r['architecture']:<18} {100 * r['accuracy']:>11.2f} "
            f"{r['test_loss']:>9.4f} {r['parameters']:>10,}"
        )
    return "\n".join(lines)
