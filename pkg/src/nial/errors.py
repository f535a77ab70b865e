"""Exception types. Each carries a short ``category`` used by the CLI error line."""


class NialError(Exception):
    category = "error"


class DimensionError(NialError, ValueError):
    category = "dimension"


class LabelError(NialError, ValueError):
    category = "label"


class ContractError(NialError, ValueError):
    category = "contract"


class BuildError(NialError, ValueError):
    category = "build"


class CheckpointFormatError(NialError):
    category = "checkpoint-format"


class CheckpointVersionError(CheckpointFormatError):
    category = "checkpoint-version"


class TrainingDivergenceError(NialError, FloatingPointError):
    category = "divergence"


class ParseError(NialError, ValueError):
    category = "parse"


class EmptyDatasetError(ParseError):
    category = "empty-dataset"


class SplitError(NialError, ValueError):
    category = "split"


class ConfigError(NialError, ValueError):
    category = "config"
