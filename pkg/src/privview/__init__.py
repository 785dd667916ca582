"""Receiver-specific privacy views of assisted-living records via a shared LSTM encoding."""

__version__ = "0.1.0"
