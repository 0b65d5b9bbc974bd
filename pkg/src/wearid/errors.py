"""Exception types raised across the wearid pipeline."""


class WearidError(Exception):
    """Base class for all wearid errors."""


# --- ingest / preprocessing ---

class MalformedFile(WearidError):
    """Recording file does not conform to the documented schema."""


class EmptyChannel(WearidError):
    """A sensor channel contains no samples."""


class NonMonotonicTime(WearidError):
    """Timestamps decrease somewhere and cannot be repaired."""


class TooShort(WearidError):
    """Channel has fewer samples than the operation needs."""


class InsufficientData(WearidError):
    """Recording is shorter than one window."""


class InvalidConfig(WearidError):
    """Generator or run configuration violates its constraints."""


# --- pair sampling ---

class SingleDevice(WearidError):
    """Alignment entry holds only one device."""


class NotEnoughPairs(WearidError):
    """Dataset cannot supply the requested number of pairs."""


# --- model / training ---

class ShapeMismatch(WearidError):
    """Input dimensions do not match what the model expects."""


class DegenerateBatch(WearidError):
    """Contrastive batch too small to define the loss."""


class NonFiniteLoss(WearidError):
    """Training loss became NaN or infinite."""


class DegenerateLabels(WearidError):
    """Matcher training set contains a single class."""


class TooFewDevices(WearidError):
    """Ensemble matching needs at least three embeddings."""


# --- analysis ---

class LengthMismatch(WearidError):
    """Vectors passed to a correlation have different lengths."""


class ConstantInput(WearidError):
    """Rank correlation is undefined for a constant vector."""


class InsufficientGroups(WearidError):
    """Dataset cannot populate all similarity groups."""


class EmptyTestSet(WearidError):
    """Evaluation received no pairs."""


class SingleClassTestSet(WearidError):
    """Evaluation pairs are all matched or all unmatched."""


class MissingActivityLabels(WearidError):
    """Windows carry no activity labels."""


class MissingModel(WearidError):
    """No trained bundle available for the requested configuration."""


# --- registry ---

class UncoverableKey(WearidError):
    """No device pair in the dataset shares the requested sensor set."""


class NoOverlap(WearidError):
    """Two devices share no sensors."""


class NoTrainedModel(WearidError):
    """Sensors overlap but no trained bundle covers any subset."""


class VersionMismatch(WearidError):
    """Bundle file uses an unsupported format version."""


class CorruptBundle(WearidError):
    """Bundle file is truncated or fails its checksum."""
