class NPPError(Exception):
    """Base class for library errors."""


class DimensionError(NPPError, ValueError):
    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class ConfigError(NPPError, ValueError):
    pass


class FormatError(NPPError, ValueError):
    """Malformed input file; message names the byte offset or line."""


class IntegrityError(NPPError, ValueError):
    pass


class NumericError(NPPError, ArithmeticError):
    pass


class StageError(NPPError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
