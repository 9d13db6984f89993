"""Speech-intent pipeline for Luganda smart-home voice control.

Audio in, device state out: MFCC features from 16 kHz WAV clips, a small
Conv2D classifier over 20 intents (or action/object slots), post-training
quantization for edge deployment, and confidence-gated command fan-out to
a simulated device fleet over pub/sub.
"""

from .audio_io import AudioClip, MODEL_WINDOW_SAMPLES, fit_length, peak_normalize, read_wav, write_wav
from .augment import AugmentParams, add_white_noise, augment_triplet, pitch_scale
from .bus import CommandMsg, GateConfig, LoopbackBus, gate, publish_command
from .dataset_eval import Manifest, evaluate, load_manifest, run_experiment_grid, split_check
from .devices import DeviceState, apply_command, run_fleet
from .dsp_frontend import FrontendConfig, MfccMatrix, mfcc
from .labels import CANONICAL, LabelMaps
from .model_store import load, save
from .nn import ModelGraph, Prediction, TrainConfig, build_model, count_params, predict, train
from .quantize import QuantTensor, calibrate_activations, quantize_model, quantize_tensor, size_report

__version__ = "0.1.0"
