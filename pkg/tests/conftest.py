import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lsic.audio_io import AudioClip


@pytest.fixture
def sine_clip():
    def make(freq_hz=440.0, duration_s=2.0, amplitude=0.5, sample_rate=16_000,
             phase=0.0):
        t = np.arange(int(duration_s * sample_rate)) / sample_rate
        return AudioClip(amplitude * np.sin(2 * np.pi * freq_hz * t + phase),
                         sample_rate)
    return make


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Synthetic 20-class corpus: 2 train / 1 val / 1 test clip per intent."""
    from lsic.synth import make_corpus

    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(root, seed=7)
    return root, manifest


@pytest.fixture(scope="session")
def toy_model(toy_corpus):
    """Reference-architecture model overfitted on the synthetic corpus.

    Trained once per session; several suites (quantization, store,
    end-to-end) reuse it.
    """
    from lsic.dataset_eval import extract_features
    from lsic.nn import TrainConfig, build_model, train

    _root, manifest = toy_corpus
    frontend_n_mfcc = 13
    from lsic.dsp_frontend import FrontendConfig

    frontend = FrontendConfig(n_mfcc=frontend_n_mfcc)
    train_set = extract_features(manifest, "train", frontend)
    val_set = extract_features(manifest, "val", frontend)
    model = build_model("gmp", frontend_n_mfcc, "single_intent",
                        frontend=frontend, seed=11)
    cfg = TrainConfig(max_epochs=120, patience=20, seed=11)
    model, history = train(model, train_set.x, train_set.y,
                           val_set.x, val_set.y, cfg)
    return model, history, train_set, val_set
