"""Exception types shared across the audit pipeline."""


class AuditError(Exception):
    """Base class for all pipeline errors."""


class TransportError(AuditError):
    """Backend unreachable, timed out, or dropped the connection."""


class ProtocolError(AuditError):
    """Backend reachable but spoke the wrong protocol (version, schema, payload)."""


class BackendBusyError(ProtocolError):
    """Backend refused the request because its queue is full (HTTP 503)."""


class UnknownCaptionError(AuditError):
    """Caption id is not part of the simulated corpus."""


class InvalidScoreError(AuditError):
    """A score came back non-finite."""


class DegenerateMaskError(AuditError):
    """Variation-mask estimation produced a nearly-empty mask."""


class ConfigError(AuditError):
    """Run configuration is invalid (CLI exit code 3)."""


class FailureBudgetExceeded(AuditError):
    """Per-caption failures exceeded the run's tolerated fraction (CLI exit code 2)."""
