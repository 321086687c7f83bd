"""Exception types shared across the package."""


class UavMtlError(Exception):
    """Base class for all package errors."""


# telemetry
class MissingColumn(UavMtlError):
    def __init__(self, name):
        super().__init__(f"missing required column {name!r}")
        self.name = name


class UnparseableRow(UavMtlError):
    def __init__(self, line_no, n_failed=None, n_total=None):
        msg = f"unparseable data starting at line {line_no}"
        if n_failed is not None:
            msg += f" ({n_failed}/{n_total} rows rejected)"
        super().__init__(msg)
        self.line_no = line_no


class EmptyFile(UavMtlError):
    pass


# labeler
class ZeroNormQuaternion(UavMtlError):
    pass


class SeriesTooShort(UavMtlError):
    pass


# pipeline
class NoUsableFlights(UavMtlError):
    pass


class EmptyTrainingSet(UavMtlError):
    pass


class DegenerateSplit(UavMtlError):
    pass


# nn / model
class ShapeMismatch(UavMtlError):
    pass


class InferBeforeTrain(UavMtlError):
    pass


class StaleCache(UavMtlError):
    pass


class NonFiniteActivation(UavMtlError):
    pass


# optim
class EmptyDataset(UavMtlError):
    pass


class NonFiniteLoss(UavMtlError):
    pass


class CorruptCheckpoint(UavMtlError):
    pass


class IoFailure(UavMtlError):
    pass


# eval
class EmptyInput(UavMtlError):
    pass


class DegenerateInput(UserWarning):
    """A class never occurs in the ground truth; its metrics are reported as absent."""


# cli
class ConfigInvalid(UavMtlError):
    pass


class CheckpointMismatch(UavMtlError):
    pass
