"""Exact tools for randomizations of classical structures."""

from __future__ import annotations

__version__ = "0.1.0"
