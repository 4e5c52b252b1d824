"""HTTP adapter exposing text-to-image pipelines over the audit wire protocol."""

__version__ = "0.1.0"
