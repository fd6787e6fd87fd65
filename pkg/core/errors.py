#!/usr/bin/env python3
"""
Exception hierarchy for the AOSA explainability engine.
"""


class AOSAError(Exception):
    """Base class for every error raised by the engine"""


class ValidationError(AOSAError, ValueError):
    """Invalid argument, specification or configuration value"""


class DimensionMismatchError(ValidationError):
    """Tensor dimensions disagree with what a model or map expects"""


class ConfigError(ValidationError):
    """Unreadable configuration file or unknown configuration key"""


class TensorFormatError(AOSAError):
    """Malformed tensor file or stream"""


class ModelError(AOSAError):
    """Score model failed to produce a result"""


class ModelTimeoutError(ModelError):
    """External model did not answer in time"""


class ProtocolError(ModelError):
    """External model violated the wire protocol"""
