"""Post-training quantization in four modes with a size/accuracy report.

Modes:
  fp32_baseline — untouched reference copy
  fp16_weights  — conv/dense weights and biases in IEEE half precision
  int8_weights  — dynamic-range: symmetric per-tensor int8 weights
  int8_full     — int8 weights plus calibrated activation ranges

Batch norm is folded into the preceding conv before int8 quantization so
the conv weight ranges are meaningful. Inference uses quantize-dequantize
(fake-quant) semantics throughout.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .audio_io import fit_length
from .dsp_frontend import mfcc
from .errors import (
    ConfigInvalid, EmptyCalibrationSet, MissingCalibration, NonFiniteInput,
)
from .nn.layers import BN_EPS, BatchNorm, Conv2D, Dense
from .nn.model import ModelGraph, _run_layers, batch_probs, clone_model

QUANT_MODES = ("fp32_baseline", "fp16_weights", "int8_weights", "int8_full")

# Per-tensor container overhead: f64 scale + i32 zero point.
TENSOR_QUANT_FIELD_BYTES = 12


@dataclass(frozen=True)
class QuantTensor:
    """Quantized payload plus the parameters to reconstruct real values."""

    data: np.ndarray
    scale: float
    zero_point: int
    shape: tuple

    def dequantize(self) -> np.ndarray:
        if self.data.dtype == np.float16:
            return self.data.astype(np.float32)
        real = (self.data.astype(np.float32) - np.float32(self.zero_point))
        return (real * np.float32(self.scale)).reshape(self.shape)

    def payload_bytes(self) -> int:
        return self.data.nbytes + TENSOR_QUANT_FIELD_BYTES


def quantize_tensor(t: np.ndarray, mode: str) -> QuantTensor:
    """Quantize one tensor: symmetric per-tensor int8, or IEEE fp16."""
    t = np.asarray(t)
    if not np.all(np.isfinite(t)):
        raise NonFiniteInput("tensor contains NaN or inf")
    if mode in ("int8_weights", "int8_full"):
        peak = float(np.max(np.abs(t))) if t.size else 0.0
        scale = peak / 127.0 if peak > 0.0 else 1.0
        q = np.clip(np.round(t / scale), -127, 127).astype(np.int8)
        return QuantTensor(q, scale, 0, t.shape)
    if mode == "fp16_weights":
        return QuantTensor(t.astype(np.float16), 1.0, 0, t.shape)
    raise ConfigInvalid(f"no tensor quantization for mode {mode!r}")


def calibrate_activations(model: ModelGraph, calib_clips) -> dict[str, tuple[float, float]]:
    """Running (min, max) of the model input and every layer output over
    the calibration clips, in eval mode."""
    clips = list(calib_clips)
    if not clips:
        raise EmptyCalibrationSet("need at least one calibration clip")
    ranges: dict[str, tuple[float, float]] = {}

    def fold_in(name, tensor):
        lo, hi = float(tensor.min()), float(tensor.max())
        if name in ranges:
            lo, hi = min(lo, ranges[name][0]), max(hi, ranges[name][1])
        ranges[name] = (lo, hi)

    for clip in clips:
        fitted = fit_length(clip, model.window_samples)
        feats = mfcc(fitted, model.frontend).values.astype(model.dtype)
        x = feats[None, :, :, None]
        fold_in("input", x)
        collect: dict[str, np.ndarray] = {}
        feat = _run_layers(model, model.trunk, x, False, None, collect=collect)
        for head in model.head_names():
            _run_layers(model, model.head_layers[head], feat, False, None, collect=collect)
        for name, tensor in collect.items():
            fold_in(name, tensor)
    return ranges


def affine_params(lo: float, hi: float) -> tuple[float, int]:
    """uint8 affine (scale, zero_point) for an observed [lo, hi] range."""
    if hi == lo:
        return 1.0, 0
    scale = (hi - lo) / 255.0
    zp = int(np.clip(round(-lo / scale), 0, 255))
    return scale, zp


def fold_batchnorm(model: ModelGraph) -> None:
    """Fold every conv->batchnorm pair into the conv, in place.

    w' = w * gamma / sqrt(var + eps); b' = beta + (b - mean) * gamma / sqrt(var + eps)
    """
    new_trunk = []
    prev = None
    for ly in model.trunk:
        if isinstance(ly, BatchNorm) and isinstance(prev, Conv2D):
            factor = ly.p["gamma"] / np.sqrt(ly.s["var"] + BN_EPS)
            prev.p["w"] = (prev.p["w"] * factor).astype(prev.p["w"].dtype)
            prev.p["b"] = (ly.p["beta"] + (prev.p["b"] - ly.s["mean"]) * factor
                           ).astype(prev.p["b"].dtype)
            continue
        new_trunk.append(ly)
        prev = ly
    model.trunk = new_trunk


def quantize_model(model: ModelGraph, scheme: str, calib=None) -> ModelGraph:
    """Produce a quantized copy of a trained model.

    int8_full requires calibration clips; other modes ignore `calib`.
    The returned graph computes with dequantized weights (fake-quant), and
    carries the compact payloads for serialization.
    """
    if scheme not in QUANT_MODES:
        raise ConfigInvalid(f"scheme must be one of {QUANT_MODES}")
    out = clone_model(model)
    out.quant_mode = scheme
    if scheme == "fp32_baseline":
        return out

    if scheme in ("int8_weights", "int8_full"):
        fold_batchnorm(out)
    if scheme == "int8_full":
        calib = None if calib is None else list(calib)
        if not calib:
            raise MissingCalibration("int8_full needs calibration clips")
        ranges = calibrate_activations(out, calib)
        out.act_ranges = {name: affine_params(lo, hi) for name, (lo, hi) in ranges.items()}

    codecs: dict[str, QuantTensor] = {}
    for ly in out.all_layers():
        if not isinstance(ly, (Conv2D, Dense)):
            continue
        keys = ("w", "b") if scheme == "fp16_weights" else ("w",)
        for k in keys:
            qt = quantize_tensor(ly.p[k], scheme)
            codecs[f"{ly.name}/{k}"] = qt
            ly.p[k] = qt.dequantize()
    out.weight_codecs = codecs
    return out


@dataclass(frozen=True)
class SizeRow:
    mode: str
    payload_bytes: int
    file_bytes: int
    accuracy: float
    accuracy_delta: float
    reduction_percent: float


@dataclass(frozen=True)
class SizeReport:
    rows: list[SizeRow]

    def to_records(self) -> list[dict]:
        return [vars(r) for r in self.rows]

    def render(self) -> str:
        header = f"{'Mode':<16} {'Payload(B)':>11} {'File(B)':>9} {'Acc(%)':>8} {'dAcc':>7} {'Red.%':>7}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.mode:<16} {r.payload_bytes:>11} {r.file_bytes:>9} "
                f"{100 * r.accuracy:>8.2f} {100 * r.accuracy_delta:>+7.2f} "
                f"{r.reduction_percent:>7.2f}"
            )
        return "\n".join(lines)


def model_payload_bytes(model: ModelGraph) -> int:
    """Serialized tensor payload size: quantized payloads where present,
    4 bytes per element (plus per-tensor quant fields) otherwise."""
    total = 0
    for key, arr in {**model.weights(), **model.state()}.items():
        if key in model.weight_codecs:
            total += model.weight_codecs[key].payload_bytes()
        else:
            total += arr.size * 4 + TENSOR_QUANT_FIELD_BYTES
    return total


def _joint_accuracy(probs, labels):
    correct = None
    for head, p in probs.items():
        hit = np.argmax(p, axis=1) == labels[head]
        correct = hit if correct is None else (correct & hit)
    return float(np.mean(correct))


def size_report(models: dict[str, ModelGraph], eval_x: np.ndarray,
                eval_y: dict[str, np.ndarray]) -> SizeReport:
    """Serialize, measure, and evaluate each mode against the fp32 baseline."""
    from . import model_store

    if "fp32_baseline" not in models:
        raise ConfigInvalid("size_report needs the fp32_baseline entry")

    measured: dict[str, tuple[int, int, float]] = {}
    for mode in QUANT_MODES:
        if mode not in models:
            continue
        m = models[mode]
        fd, path = tempfile.mkstemp(suffix=".lsic")
        os.close(fd)
        try:
            file_bytes = model_store.save(m, path)
        finally:
            os.unlink(path)
        acc = _joint_accuracy(batch_probs(m, eval_x), eval_y)
        measured[mode] = (model_payload_bytes(m), file_bytes, acc)

    base_file = measured["fp32_baseline"][1]
    base_acc = measured["fp32_baseline"][2]
    rows = [
        SizeRow(mode, payload, fbytes, acc, acc - base_acc,
                100.0 * (1.0 - fbytes / base_file))
        for mode, (payload, fbytes, acc) in measured.items()
    ]
    return SizeReport(rows)
