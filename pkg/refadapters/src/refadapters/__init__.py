"""Model-backed adapter processes for the content-injection toolkit's wire protocol."""

__version__ = "0.1.0"
