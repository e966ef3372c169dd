"""Exception hierarchy.

Every exception carries an ``exit_code`` used by the command line front end:
2 configuration, 3 I/O, 4 forecasting backend, 5 numeric failure.
"""


class CSPError(Exception):
    exit_code = 1


class ConfigError(CSPError):
    exit_code = 2


class IOFailure(CSPError):
    exit_code = 3


class BackendError(CSPError):
    exit_code = 4


class NumericError(CSPError, ValueError):
    exit_code = 5


# configuration
class ConfigInvalid(ConfigError):
    def __init__(self, field, detail=""):
        self.field = field
        super().__init__(f"invalid config field {field!r}" + (f": {detail}" if detail else ""))


class SpecInvalid(ConfigError):
    pass


class OffsetOutOfRange(ConfigError):
    pass


# I/O
class ManifestMissing(IOFailure):
    pass


class ShapeMismatch(IOFailure):
    def __init__(self, sample_id, detail=""):
        self.sample_id = sample_id
        super().__init__(f"shape mismatch in sample {sample_id!r}" + (f": {detail}" if detail else ""))


class MissingSample(IOFailure):
    def __init__(self, sample_id):
        self.sample_id = sample_id
        super().__init__(f"sample {sample_id!r} not in dataset")


class MissingPrerequisite(IOFailure):
    def __init__(self, stage, detail=""):
        self.stage = stage
        super().__init__(f"stage {stage!r} requires missing artifacts" + (f": {detail}" if detail else ""))


class MissingArtifact(IOFailure):
    pass


# backend
class BackendFailure(BackendError):
    pass


# numeric
class NonFinite(NumericError):
    def __init__(self, where=""):
        self.where = where
        super().__init__(f"non-finite values in {where}" if where else "non-finite values")


class EmptySeries(NumericError):
    pass


class EmptyList(NumericError):
    pass


class LengthMismatch(NumericError):
    pass


class TooFewSeries(NumericError):
    pass


class KTooSmall(NumericError):
    pass


class EmptySegment(NumericError):
    pass


class TooFewPoints(NumericError):
    pass


class AllFitsFailed(NumericError):
    pass
