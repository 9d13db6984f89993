"""LSIC model container: compact binary serialization for all quant modes.

Layout (all integers little-endian):

    magic "LSIC" | format_version u16 | header_len u32 | header JSON
    | n_tensors u32
    | per tensor: name_len u16, name, dtype u8 (0=f32 1=f16 2=i8),
                  ndim u8, dims u32 x ndim, scale f64, zero_point i32,
                  payload_len u64, payload
    | crc32 u32 of every preceding byte

The header JSON carries layer specs, label maps, frontend config, head
config, and quant mode, so a loaded model is self-contained for inference.
Serialization is deterministic: same model, same bytes.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .dsp_frontend import FrontendConfig
from .errors import CorruptFile, UnsupportedVersion
from .nn.layers import layer_from_spec
from .nn.model import ModelGraph
from .quantize import QuantTensor

MAGIC = b"LSIC"
FORMAT_VERSION = 1

_DTYPE_CODES = {"f32": 0, "f16": 1, "i8": 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2"), 2: np.dtype("i1")}


def _tensor_entries(model: ModelGraph):
    """Deterministic tensor order: layer order, params then state, sorted
    within each group."""
    for ly in model.all_layers():
        for k in sorted(ly.p):
            yield f"{ly.name}/{k}", ly.p[k], False
        for k in sorted(ly.s):
            yield f"{ly.name}/{k}", ly.s[k], True


def _encode_tensor(name: str, qt: QuantTensor | None, arr: np.ndarray) -> bytes:
    if qt is not None:
        code = 1 if qt.data.dtype == np.float16 else 2
        payload = np.ascontiguousarray(qt.data.reshape(-1)).astype(
            _CODE_DTYPES[code]).tobytes()
        shape, scale, zp = qt.shape, qt.scale, qt.zero_point
    else:
        code = 0
        payload = arr.astype("<f4").tobytes()
        shape, scale, zp = arr.shape, 1.0, 0
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", code, len(shape))
    head += struct.pack(f"<{len(shape)}I", *shape) if shape else b""
    head += struct.pack("<di", scale, zp)
    head += struct.pack("<Q", len(payload))
    return head + payload


def save(model: ModelGraph, path) -> int:
    """Serialize a model; returns bytes written."""
    header = json.dumps(model.spec_dict(), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    entries = list(_tensor_entries(model))
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", FORMAT_VERSION)
    blob += struct.pack("<I", len(header))
    blob += header
    blob += struct.pack("<I", len(entries))
    for name, arr, _ in entries:
        blob += _encode_tensor(name, model.weight_codecs.get(name), arr)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(str(path), "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFile(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path) -> ModelGraph:
    """Load a model container; verifies magic, version, and CRC."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 14 or data[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptFile(f"{path}: CRC mismatch")

    rd = _Reader(data[:-4], path)
    rd.take(4)
    (version,) = rd.unpack("<H")
    if version > FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version} > {FORMAT_VERSION}")
    (header_len,) = rd.unpack("<I")
    try:
        spec = json.loads(rd.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header: {exc}") from None

    trunk = [layer_from_spec(s) for s in spec["trunk"]]
    head_layers = {h: [layer_from_spec(s) for s in specs]
                   for h, specs in spec["head_layers"].items()}
    act_ranges = spec["act_ranges"]
    if act_ranges is not None:
        act_ranges = {k: (float(v[0]), int(v[1])) for k, v in act_ranges.items()}
    model = ModelGraph(
        arch_variant=spec["arch_variant"],
        heads=spec["heads"],
        n_mfcc=spec["n_mfcc"],
        input_frames=spec["input_frames"],
        frontend=FrontendConfig.from_dict(spec["frontend"]),
        label_maps={h: tuple(v) for h, v in spec["label_maps"].items()},
        trunk=trunk,
        head_layers=head_layers,
        window_samples=spec["window_samples"],
        quant_mode=spec["quant_mode"],
        act_ranges=act_ranges,
    )

    (n_tensors,) = rd.unpack("<I")
    codecs: dict[str, QuantTensor] = {}
    for _ in range(n_tensors):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        code, ndim = rd.unpack("<BB")
        shape = tuple(rd.unpack(f"<{ndim}I")) if ndim else ()
        scale, zp = rd.unpack("<di")
        (payload_len,) = rd.unpack("<Q")
        payload = rd.take(payload_len)
        if code not in _CODE_DTYPES:
            raise CorruptFile(f"{path}: unknown dtype code {code} for {name}")
        raw = np.frombuffer(payload, dtype=_CODE_DTYPES[code]).reshape(shape)
        try:
            if code == 0:
                model.set_tensor(name, raw.astype(np.float32))
            else:
                qt = QuantTensor(raw.copy(), scale, zp, shape)
                codecs[name] = qt
                model.set_tensor(name, qt.dequantize())
        except KeyError:
            raise CorruptFile(f"{path}: tensor {name} matches no layer") from None
    model.weight_codecs = codecs
    return model
