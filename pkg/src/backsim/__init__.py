"""Bistatic frequency-shifted OFDM backscatter: simulation and analysis."""

__version__ = "0.1.0"

from . import signalcore, waveform, channel, tag, receiver, ranging, crlb, scenarios
