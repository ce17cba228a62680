"""Shared exception types, mapped to CLI exit codes in handsat.cli."""


class HandsatError(Exception):
    """Base class for all package errors."""


class ContractError(HandsatError):
    """An operation was called with arguments violating its contract
    (shape mismatch, out-of-range index, inconsistent mask)."""


class ConfigError(HandsatError):
    """Invalid or inconsistent configuration."""


class CorpusError(HandsatError):
    """Malformed or inconsistent dialogue data."""


class CheckpointError(HandsatError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class UnimplementedParameterError(HandsatError):
    """A reserved parameter was set to a value this implementation
    deliberately refuses to guess a semantics for."""
