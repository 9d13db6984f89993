"""Model graph: the small Conv2D intent classifier in its two pooling
variants (global-max-pool / flatten) and two head configurations
(single 20-way intent / parallel action+object slots).

The trunk is three conv blocks (16/32/64 filters, 3x3, same padding),
each followed by batch norm, ReLU, and 2x2 max pooling, then the pooling
variant, dropout, and a 64-unit dense layer. Heads are dense + softmax.
"""

from __future__ import annotations

import numpy as np

from ..audio_io import AudioClip, MODEL_WINDOW_SAMPLES, fit_length
from ..dsp_frontend import FrontendConfig, MfccMatrix, mfcc
from ..errors import ConfigInvalid, EmptyDataset, ShapeMismatch
from ..labels import CANONICAL
from .layers import (
    BatchNorm, Conv2D, Dense, Dropout, Flatten, GlobalMaxPool, Layer,
    MaxPool2x2, ReLU, Softmax,
)

ARCH_VARIANTS = ("gmp", "flatten")
HEAD_CONFIGS = ("single_intent", "slots")


class Prediction:
    """Per-head probabilities plus the derived intent and confidence.

    Confidence is the top probability for a single-intent model and the
    minimum of the two head maxima for a slots model. The (object, action)
    pair is populated whenever the labels permit; slot models can compose
    pairs that no device supports — gating decides what to do with those.
    """

    def __init__(self, probs: dict[str, np.ndarray], intent: str, confidence: float,
                 action: str | None, object: str | None):
        self.probs = probs
        self.intent = intent
        self.confidence = confidence
        self.action = action
        self.object = object

    def top_k(self, k: int = 3) -> list[tuple[str, float]]:
        """Top-k (label, probability) pairs of the primary head."""
        head = "intent" if "intent" in self.probs else "object"
        labels = self._labels[head]
        vec = self.probs[head]
        order = np.argsort(vec)[::-1][:k]
        return [(labels[i], float(vec[i])) for i in order]

    _labels: dict[str, tuple[str, ...]] = {}


class ModelGraph:
    """Ordered layers + named weights + label maps + frontend config."""

    def __init__(self, arch_variant, heads, n_mfcc, input_frames, frontend,
                 label_maps, trunk, head_layers, window_samples=MODEL_WINDOW_SAMPLES,
                 quant_mode="fp32", act_ranges=None, weight_codecs=None):
        self.arch_variant = arch_variant
        self.heads = heads
        self.n_mfcc = n_mfcc
        self.input_frames = input_frames
        self.frontend = frontend
        self.label_maps = {h: tuple(v) for h, v in label_maps.items()}
        self.trunk: list[Layer] = trunk
        self.head_layers: dict[str, list[Layer]] = head_layers
        self.window_samples = window_samples
        self.quant_mode = quant_mode
        # layer name -> (scale, zero_point) for full-integer inference
        self.act_ranges: dict[str, tuple[float, int]] | None = act_ranges
        # weight key -> QuantTensor payload for compact serialization
        self.weight_codecs = weight_codecs or {}

    # --- tensor access ---

    def all_layers(self) -> list[Layer]:
        out = list(self.trunk)
        for head in sorted(self.head_layers):
            out.extend(self.head_layers[head])
        return out

    def weights(self) -> dict[str, np.ndarray]:
        return {f"{ly.name}/{k}": v for ly in self.all_layers() for k, v in ly.p.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {f"{ly.name}/{k}": v for ly in self.all_layers() for k, v in ly.s.items()}

    def set_tensor(self, key: str, value: np.ndarray) -> None:
        name, param = key.rsplit("/", 1)
        for ly in self.all_layers():
            if ly.name == name:
                target = ly.p if param in ly.p else ly.s
                if param not in target:
                    break
                if target[param].shape != value.shape:
                    raise ShapeMismatch(f"{key}: shape {value.shape} != {target[param].shape}")
                target[param] = value
                return
        raise KeyError(key)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in {**self.weights(), **self.state()}.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for key, value in snap.items():
            self.set_tensor(key, value)

    def head_names(self) -> list[str]:
        return sorted(self.head_layers)

    @property
    def dtype(self):
        for ly in self.all_layers():
            if "w" in ly.p:
                return ly.p["w"].dtype
        return np.dtype(np.float32)

    def spec_dict(self) -> dict:
        return {
            "arch_variant": self.arch_variant,
            "heads": self.heads,
            "n_mfcc": self.n_mfcc,
            "input_frames": self.input_frames,
            "window_samples": self.window_samples,
            "frontend": self.frontend.to_dict(),
            "label_maps": {h: list(v) for h, v in self.label_maps.items()},
            "quant_mode": self.quant_mode,
            "act_ranges": (None if self.act_ranges is None
                           else {k: [v[0], v[1]] for k, v in self.act_ranges.items()}),
            "trunk": [ly.spec() for ly in self.trunk],
            "head_layers": {h: [ly.spec() for ly in hl]
                            for h, hl in self.head_layers.items()},
        }


def build_model(arch_variant: str, n_mfcc: int, heads: str, *,
                frontend: FrontendConfig | None = None,
                window_samples: int = MODEL_WINDOW_SAMPLES,
                conv_filters: tuple[int, ...] = (16, 32, 64),
                dense_units: int = 64,
                dropout_rate: float = 0.3,
                intent_labels: tuple[str, ...] | None = None,
                seed: int = 0,
                dtype=np.float32) -> ModelGraph:
    """Construct and He-initialize the reference classifier."""
    if arch_variant not in ARCH_VARIANTS:
        raise ConfigInvalid(f"arch_variant must be one of {ARCH_VARIANTS}")
    if heads not in HEAD_CONFIGS:
        raise ConfigInvalid(f"heads must be one of {HEAD_CONFIGS}")
    if n_mfcc not in (10, 13) and intent_labels is None:
        raise ConfigInvalid("n_mfcc must be 10 or 13 for the reference model")

    frontend = frontend or FrontendConfig(n_mfcc=n_mfcc)
    frontend.validate()
    if frontend.n_mfcc != n_mfcc:
        raise ConfigInvalid(f"frontend n_mfcc {frontend.n_mfcc} != model n_mfcc {n_mfcc}")
    input_frames = frontend.frame_count(window_samples)

    trunk: list[Layer] = []
    in_ch = 1
    for i, filters in enumerate(conv_filters, start=1):
        trunk += [Conv2D(f"conv{i}", in_ch, filters),
                  BatchNorm(f"bn{i}", filters),
                  ReLU(f"relu{i}"),
                  MaxPool2x2(f"pool{i}")]
        in_ch = filters
    trunk.append(GlobalMaxPool("gmp") if arch_variant == "gmp" else Flatten("flatten"))
    trunk.append(Dropout("dropout", dropout_rate))

    # Shape-check the trunk and find the dense fan-in.
    shape: tuple = (input_frames, n_mfcc, 1)
    for ly in trunk:
        shape = ly.out_shape(shape)
    trunk += [Dense("fc", shape[0], dense_units), ReLU("fc_relu")]

    if heads == "single_intent":
        labels = tuple(intent_labels) if intent_labels else CANONICAL.intents
        label_maps = {"intent": labels}
        head_layers = {"intent": [Dense("intent_logits", dense_units, len(labels)),
                                  Softmax("intent_softmax")]}
    else:
        label_maps = {"action": CANONICAL.actions, "object": CANONICAL.objects}
        head_layers = {
            "action": [Dense("action_logits", dense_units, len(CANONICAL.actions)),
                       Softmax("action_softmax")],
            "object": [Dense("object_logits", dense_units, len(CANONICAL.objects)),
                       Softmax("object_softmax")],
        }

    model = ModelGraph(arch_variant, heads, n_mfcc, input_frames, frontend,
                       label_maps, trunk, head_layers, window_samples)
    rng = np.random.default_rng(seed)
    for ly in model.all_layers():
        ly.init_weights(rng, dtype)
    return model


def count_params(model: ModelGraph) -> int:
    """Total trainable tensor elements."""
    return int(sum(v.size for v in model.weights().values()))


def clone_model(model: ModelGraph) -> ModelGraph:
    """Structural deep copy: fresh layer objects, copied tensors."""
    from .layers import layer_from_spec

    trunk = [layer_from_spec(ly.spec()) for ly in model.trunk]
    head_layers = {h: [layer_from_spec(ly.spec()) for ly in hl]
                   for h, hl in model.head_layers.items()}
    out = ModelGraph(model.arch_variant, model.heads, model.n_mfcc,
                     model.input_frames, model.frontend, dict(model.label_maps),
                     trunk, head_layers, model.window_samples,
                     quant_mode=model.quant_mode,
                     act_ranges=None if model.act_ranges is None else dict(model.act_ranges),
                     weight_codecs=dict(model.weight_codecs))
    out.restore(model.snapshot())
    return out


def _fake_quant_act(x: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    q = np.clip(np.round(x / scale) + zero_point, 0, 255)
    return ((q - zero_point) * scale).astype(x.dtype)


def _run_layers(model, layers, x, train, rng, caches=None, collect=None):
    for ly in layers:
        x, cache = ly.forward(x, train=train, rng=rng)
        if caches is not None:
            caches.append((ly, cache))
        if collect is not None:
            collect[ly.name] = x
        if not train and model.act_ranges and ly.name in model.act_ranges:
            scale, zp = model.act_ranges[ly.name]
            x = _fake_quant_act(x, scale, zp)
    return x


def _check_input(model, x):
    if x.ndim != 4 or x.shape[3] != 1 or x.shape[2] != model.n_mfcc:
        raise ShapeMismatch(
            f"expected (N, T, {model.n_mfcc}, 1) input, got {x.shape}"
        )


def batch_probs(model: ModelGraph, x: np.ndarray, train: bool = False,
                rng=None, chunk: int = 256) -> dict[str, np.ndarray]:
    """Per-head probabilities for a batch of feature tensors."""
    _check_input(model, x)
    outs: dict[str, list[np.ndarray]] = {h: [] for h in model.head_names()}
    for lo in range(0, x.shape[0], chunk):
        part = x[lo:lo + chunk]
        if not train and model.act_ranges and "input" in model.act_ranges:
            scale, zp = model.act_ranges["input"]
            part = _fake_quant_act(part, scale, zp)
        feat = _run_layers(model, model.trunk, part, train, rng)
        for head in model.head_names():
            outs[head].append(_run_layers(model, model.head_layers[head], feat, train, rng))
    return {h: np.concatenate(v, axis=0) for h, v in outs.items()}


def _prediction_from_probs(model: ModelGraph, probs: dict[str, np.ndarray]) -> Prediction:
    if model.heads == "single_intent":
        vec = probs["intent"]
        idx = int(np.argmax(vec))
        intent = model.label_maps["intent"][idx]
        confidence = float(vec[idx])
        try:
            obj, action = CANONICAL.split_intent(intent)
        except KeyError:
            obj, action = None, None
    else:
        a_vec, o_vec = probs["action"], probs["object"]
        a_idx, o_idx = int(np.argmax(a_vec)), int(np.argmax(o_vec))
        action = model.label_maps["action"][a_idx]
        obj = model.label_maps["object"][o_idx]
        intent = f"{obj}_{action}"
        confidence = float(min(a_vec[a_idx], o_vec[o_idx]))
    pred = Prediction(probs, intent, confidence, action, obj)
    pred._labels = model.label_maps
    return pred


def forward(model: ModelGraph, x, train_mode: bool = False, rng=None) -> Prediction:
    """Run one feature matrix through the model.

    Eval mode is deterministic (running BN stats, no dropout); train mode
    needs an RNG for the dropout masks.
    """
    values = x.values if isinstance(x, MfccMatrix) else np.asarray(x)
    if values.ndim != 2:
        raise ShapeMismatch(f"expected a (T, n_mfcc) matrix, got shape {values.shape}")
    batch = values.astype(model.dtype)[None, :, :, None]
    probs = batch_probs(model, batch, train=train_mode, rng=rng)
    return _prediction_from_probs(model, {h: v[0] for h, v in probs.items()})


def predict(model: ModelGraph, clip: AudioClip) -> Prediction:
    """Full inference path: fit to the model window, extract MFCCs,
    eval-mode forward."""
    fitted = fit_length(clip, model.window_samples)
    features = mfcc(fitted, model.frontend)
    return forward(model, features)


def loss_and_grad(model: ModelGraph, x: np.ndarray, labels: dict[str, np.ndarray],
                  rng=None):
    """Mean categorical cross-entropy (summed over heads) and gradients
    for every trainable tensor, via backpropagation.

    Returns (loss, grads keyed like weights(), per-head train-mode probs).
    """
    if x.shape[0] == 0:
        raise EmptyDataset("empty batch")
    _check_input(model, x)
    n = x.shape[0]

    trunk_caches: list = []
    feat = _run_layers(model, model.trunk, x, True, rng, caches=trunk_caches)

    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    dfeat = np.zeros_like(feat)
    probs_out: dict[str, np.ndarray] = {}
    for head in model.head_names():
        layers = model.head_layers[head]
        dense, softmax = layers[0], layers[-1]
        logits, dense_cache = dense.forward(feat, train=True, rng=rng)
        probs, _ = softmax.forward(logits)
        probs_out[head] = probs
        y = labels[head]
        if y.shape[0] != n:
            raise ShapeMismatch(f"head {head}: {y.shape[0]} labels for {n} examples")
        picked = probs[np.arange(n), y]
        loss += float(-np.mean(np.log(np.maximum(picked, 1e-30))))
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        dhead, dense_grads = dense.backward(dlogits.astype(feat.dtype), dense_cache)
        for k, g in dense_grads.items():
            grads[f"{dense.name}/{k}"] = g
        dfeat += dhead

    dx = dfeat
    for ly, cache in reversed(trunk_caches):
        dx, layer_grads = ly.backward(dx, cache)
        for k, g in layer_grads.items():
            grads[f"{ly.name}/{k}"] = g

    return loss, grads, probs_out
