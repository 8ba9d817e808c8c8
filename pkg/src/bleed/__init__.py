"""Toolkit for measuring and mitigating content injection attacks on ranked retrieval."""

__version__ = "0.1.0"
