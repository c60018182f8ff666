from typing import Optional


# Custom Exception Classes for Enhanced Error Handling
class FairRecError(Exception):
    """
    Base exception for fairness-aware recommender operations.

    This is the parent class for all pipeline related errors, providing a
    common base for error handling and for mapping failures to CLI exit codes.
    """
    failure_class = "error"
    exit_code = 1

    def __init__(self, message: str, component: str = None, **kwargs):
        self.component = component
        self.context = kwargs

        # Build detailed error message with context
        detailed_message = message
        if component:
            detailed_message = f"[{component}] {detailed_message}"
        if kwargs:
            context_str = ", ".join([f"{k}={v}" for k, v in kwargs.items()])
            detailed_message = f"{detailed_message} - Context: {context_str}"

        super().__init__(detailed_message)


class DataParseError(FairRecError):
    """
    Raised when a ratings or users stream cannot be parsed.

    Covers malformed lines, ratings outside 1..N_max, duplicate
    (user, item) pairs and unknown gender/age codes. The offending line
    number is kept on the exception.
    """
    failure_class = "parse"
    exit_code = 3

    def __init__(self, message: str, line_number: Optional[int] = None, component: str = "dataset", **kwargs):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message, component=component, **kwargs)


class DataIOError(FairRecError):
    """Raised when an input file or a stage artifact cannot be read or written."""
    failure_class = "I/O"
    exit_code = 4

    def __init__(self, message: str, path: str = None, component: str = "io", **kwargs):
        self.path = path
        if path:
            message = f"{message} ({path})"
        super().__init__(message, component=component, **kwargs)


class ArtifactVersionError(DataIOError):
    """Raised when a persisted model carries an unknown header or version."""


class ConfigError(FairRecError):
    """
    Raised when configuration values violate their invariants.

    This includes invalid YAML files, bad flag overrides, unknown mode or
    scheme strings, split fractions that do not sum to one and invalid
    environment variables.
    """
    failure_class = "config"
    exit_code = 5

    def __init__(self, message: str, field_name: str = None, component: str = "config", **kwargs):
        self.field_name = field_name
        if field_name:
            message = f"{message} (field: {field_name})"
        super().__init__(message, component=component, **kwargs)


class GroupError(ConfigError):
    """
    Raised when a minority scheme cannot be applied.

    Either one side of the bipartition is empty, or a user without
    demographic information reaches an operation that needs a label.
    """

    def __init__(self, message: str, group: str = None, component: str = "groups", **kwargs):
        self.group = group
        if group:
            message = f"{message} (group: {group})"
        super().__init__(message, component=component, **kwargs)


class DivergenceError(FairRecError):
    """Raised when a training loss stops being finite."""
    failure_class = "divergence"
    exit_code = 6

    def __init__(self, message: str, epoch: int = None, component: str = None, **kwargs):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message, component=component, **kwargs)


class ModelShapeError(FairRecError):
    """
    Raised when indexes or widths do not fit a model.

    Out-of-range user or item indexes, input width mismatches, users unknown
    to the factor model and rated entities without an index value all end up
    here.
    """
    failure_class = "shape"
    exit_code = 7
