"""Prosody-aware open-vocabulary keyword spotting on synthetic speech."""

__version__ = "0.1.0"
