import struct

import numpy as np
import pytest

from lsic.errors import CorruptFile, UnsupportedVersion
from lsic.model_store import FORMAT_VERSION, load, save
from lsic.nn import build_model
from lsic.nn.model import batch_probs
from lsic.quantize import QUANT_MODES, quantize_model


def small_model(seed=0):
    return build_model("gmp", 10, "single_intent", window_samples=3600,
                       conv_filters=(4, 8), dense_units=16,
                       intent_labels=tuple(f"c{i}" for i in range(5)), seed=seed)


def assert_models_equal(a, b):
    aw, bw = {**a.weights(), **a.state()}, {**b.weights(), **b.state()}
    assert set(aw) == set(bw)
    for k in aw:
        np.testing.assert_array_equal(aw[k], bw[k], err_msg=k)
    assert a.spec_dict() == b.spec_dict()


def test_round_trip_fresh_model(tmp_path):
    model = small_model()
    path = tmp_path / "m.lsic"
    n = save(model, path)
    assert n == path.stat().st_size
    back = load(path)
    assert_models_equal(model, back)


def test_round_trip_trained_toy(tmp_path, toy_model):
    model, *_ = toy_model
    path = tmp_path / "toy.lsic"
    save(model, path)
    back = load(path)
    assert_models_equal(model, back)


@pytest.mark.parametrize("mode", QUANT_MODES)
def test_round_trip_all_quant_modes(tmp_path, toy_model, toy_corpus, mode):
    from lsic.audio_io import read_wav

    model, _, train_set, _ = toy_model
    _root, manifest = toy_corpus
    calib = ([read_wav(r.path) for r in manifest.for_split("train")[:5]]
             if mode == "int8_full" else None)
    q = quantize_model(model, mode, calib=calib)
    path = tmp_path / f"{mode}.lsic"
    save(q, path)
    back = load(path)
    assert_models_equal(q, back)
    assert back.quant_mode == mode
    # inference identical through the round trip
    a = batch_probs(q, train_set.x[:4])["intent"]
    b = batch_probs(back, train_set.x[:4])["intent"]
    np.testing.assert_array_equal(a, b)


def test_deterministic_bytes(tmp_path):
    model = small_model(seed=3)
    p1, p2 = tmp_path / "a.lsic", tmp_path / "b.lsic"
    save(model, p1)
    save(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_flipped_byte_detected(tmp_path):
    model = small_model()
    path = tmp_path / "m.lsic"
    save(model, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        load(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.lsic"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CorruptFile):
        load(path)


def test_future_version_rejected(tmp_path):
    import zlib
    model = small_model()
    path = tmp_path / "m.lsic"
    save(model, path)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<H", blob, 4, FORMAT_VERSION + 1)
    # re-seal the CRC so only the version trips
    body = bytes(blob[:-4])
    blob[-4:] = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersion):
        load(path)


def test_unknown_layer_kind_rejected(tmp_path):
    import json
    import zlib
    from lsic.errors import UnknownLayerKind

    model = small_model()
    path = tmp_path / "m.lsic"
    save(model, path)
    blob = path.read_bytes()
    (header_len,) = struct.unpack_from("<I", blob, 6)
    header = json.loads(blob[10:10 + header_len].decode())
    header["trunk"][0]["kind"] = "deconv"
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = blob[:6] + struct.pack("<I", len(new_header)) + new_header + blob[10 + header_len:-4]
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(UnknownLayerKind):
        load(path)


def test_exact_byte_accounting(tmp_path):
    import json
    model = small_model()
    path = tmp_path / "m.lsic"
    n = save(model, path)
    header = json.dumps(model.spec_dict(), sort_keys=True,
                        separators=(",", ":")).encode()
    tensors = {**model.weights(), **model.state()}
    expected = 4 + 2 + 4 + len(header) + 4  # magic, version, header len+body, count
    for name, arr in tensors.items():
        expected += 2 + len(name) + 1 + 1 + 4 * arr.ndim + 8 + 4 + 8 + 4 * arr.size
    expected += 4  # CRC
    assert n == expected


def test_frontend_config_survives(tmp_path, toy_model):
    model, *_ = toy_model
    path = tmp_path / "m.lsic"
    save(model, path)
    back = load(path)
    assert back.frontend == model.frontend
    assert back.label_maps == model.label_maps
    assert back.window_samples == model.window_samples
