"""Exception hierarchy for the lsic pipeline.

Every domain failure derives from LsicError so the CLI can map it to
exit code 1; anything else is a bug.
"""


class LsicError(Exception):
    """Base class for all pipeline errors."""


# --- audio ---

class MalformedWav(LsicError):
    """File is not a parseable RIFF/WAVE container."""


class UnsupportedEncoding(LsicError):
    """WAV codec other than PCM16 or 32-bit IEEE float."""


class WrongSampleRate(LsicError):
    """Clip sample rate differs from the 16 kHz the pipeline requires."""


class ClipTooShort(LsicError):
    """Clip shorter than one analysis frame."""


class SignalSilent(LsicError):
    """All-zero signal; SNR-relative operations are undefined."""


# --- config / shapes ---

class ConfigInvalid(LsicError):
    """Configuration violates its invariants."""


class ShapeMismatch(LsicError):
    """Tensor shape incompatible with the layer or model input."""


# --- training / data ---

class EmptyDataset(LsicError):
    """No examples to train on."""


class EmptySplit(LsicError):
    """Requested manifest split contains no records."""


class MalformedRecord(LsicError):
    """Manifest line is not a valid record."""


class UnknownLabel(LsicError):
    """Label outside the canonical taxonomy."""


class InconsistentSlots(LsicError):
    """Record intent does not match its (object, action) slots."""


# --- quantization ---

class NonFiniteInput(LsicError):
    """Tensor contains NaN or inf."""


class EmptyCalibrationSet(LsicError):
    """Activation calibration requires at least one clip."""


class MissingCalibration(LsicError):
    """Full-integer quantization requested without calibration data."""


# --- model store ---

class CorruptFile(LsicError):
    """Model container failed magic/CRC validation."""


class UnsupportedVersion(LsicError):
    """Model container format version newer than this library."""


class UnknownLayerKind(LsicError):
    """Model container references a layer kind this library lacks."""


# --- bus / devices ---

class NotConnected(LsicError):
    """Bus operation attempted on a closed or unconnected client."""


class PublishTimeout(LsicError):
    """Broker did not acknowledge a QoS-1 publish in time."""


class WrongDevice(LsicError):
    """Command object does not match the device kind."""
