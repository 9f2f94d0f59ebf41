"""Backscatter tag model.

The tag multiplies the incident field by (structural - Gamma(t)) where
Gamma(t) = x_pkt(t) * kappa(t): a symbol-rate reflection state times a fast
+/-1 clock square wave. The clock fundamental sits at the configured band
shift, so the odd harmonics translate the tag response away from the
illumination; only the +/-1st harmonics are kept by the reader's band
filters, and the model composes each band with the matching Fourier
coefficient instead of simulating the (far above Nyquist) clock itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import OfdmConfig
from . import signalcore

# Barker-13 plus a short constant-modulus extension; fixed sync word for the
# 16-symbol packet preamble.
PREAMBLE16 = np.array([+1, +1, +1, +1, +1, -1, -1, +1, +1, -1, +1, -1, +1,
                       +1, +1, -1], dtype=int)


@dataclass
class TagConfig:
    """Reflection states and timing of the tag.

    gamma0/gamma1 : complex reflection coefficients for the two states
    structural    : antenna structural-mode reflection (carries no data)
    t_sym_s       : tag symbol duration; integer multiple of the OFDM symbol
    f_off_tag_hz  : tag clock frequency error relative to the nominal shift
    mode          : 'packet' | 'cw' | 'burst'
    duty          : on fraction of the burst cycle (burst mode only)
    burst_period_s: burst repetition interval
    """

    gamma0: complex = 1.0 + 0j
    gamma1: complex = -1.0 + 0j
    structural: complex = 0.0 + 0j
    t_sym_s: float = 8 / 960e3
    f_off_tag_hz: float = 0.0
    mode: str = "packet"
    duty: float = 0.5
    burst_period_s: float = 0.05

    def __post_init__(self):
        if self.mode not in ("packet", "cw", "burst"):
            raise ValueError(f"unknown tag mode {self.mode!r}")
        if self.t_sym_s <= 0:
            raise ValueError("t_sym_s must be positive")
        if not 0 < self.duty <= 1:
            raise ValueError("duty must be in (0, 1]")

    def symbols_per_tag_symbol(self, config: OfdmConfig) -> int:
        """OFDM symbols spanned by one tag symbol (validated integer)."""
        k = self.t_sym_s * config.spacing_hz
        if abs(k - round(k)) > 1e-6 or round(k) < 1:
            raise ValueError("t_sym_s must be an integer multiple of the OFDM symbol")
        return int(round(k))

    def clock_ratio(self, config: OfdmConfig) -> int:
        """Tag clock cycles per tag symbol; must come out integer."""
        q = config.shift_hz * self.t_sym_s
        if abs(q - round(q)) > 1e-9:
            raise ValueError("shift_hz * t_sym_s must be an integer")
        return int(round(q))


@dataclass
class TagPacket:
    """Fixed preamble plus payload bits, repeated cyclically when needed."""

    preamble: np.ndarray = field(default_factory=lambda: PREAMBLE16.copy())
    payload_bits: np.ndarray = field(default_factory=lambda: np.zeros(64, dtype=int))

    def __post_init__(self):
        self.preamble = np.asarray(self.preamble, dtype=int)
        self.payload_bits = np.asarray(self.payload_bits, dtype=int)
        if not np.all(np.abs(self.preamble) == 1):
            raise ValueError("preamble symbols must be +/-1")
        if not np.all((self.payload_bits == 0) | (self.payload_bits == 1)):
            raise ValueError("payload must be bits")

    @property
    def n_symbols(self) -> int:
        return self.preamble.size + self.payload_bits.size

    @property
    def symbols(self) -> np.ndarray:
        """Whole packet as +/-1 (bit 0 -> +1, bit 1 -> -1)."""
        return np.concatenate([self.preamble, 1 - 2 * self.payload_bits])

    def reflection_states(self, config: TagConfig) -> np.ndarray:
        s = self.symbols
        return np.where(s > 0, config.gamma0, config.gamma1).astype(complex)


def make_packet(n_payload: int = 64, seed=None) -> TagPacket:
    rng = signalcore.as_rng(seed)
    bits = rng.integers(0, 2, size=n_payload)
    return TagPacket(payload_bits=bits)


def clock_harmonic(order: int) -> complex:
    """Fourier coefficient of the +/-1 clock square wave at order*F_clk.

    Odd orders: -2j/(pi*order); even orders including DC vanish exactly.
    """
    if order % 2 == 0:
        return 0.0 + 0j
    return -2j / (np.pi * order)


def band_coefficient(band: str, config: TagConfig, state=None) -> complex:
    """Multiplier the tag applies to the incident spectrum in one reader band.

    The reflected field is y*(structural - Gamma); the center band keeps the
    unmodulated structural term, the side bands pick up -state times the
    -1st/+1st clock harmonic.
    """
    if band == "center":
        return complex(config.structural)
    if state is None:
        state = config.gamma0
    if band == "lower":
        return -state * np.conj(clock_harmonic(1))   # -state * (+2j/pi)
    if band == "upper":
        return -state * clock_harmonic(1)            # -state * (-2j/pi)
    raise ValueError(f"unknown band {band!r}")


def _x_pkt(t: np.ndarray, states: np.ndarray, t_sym: float) -> np.ndarray:
    m = np.floor_divide(t, t_sym).astype(int) % states.size
    return states[m]


def _burst_gate(t: np.ndarray, config: TagConfig) -> np.ndarray:
    if config.mode != "burst":
        return np.ones_like(t)
    frac = np.mod(t, config.burst_period_s) / config.burst_period_s
    return (frac < config.duty).astype(float)


def modulation_waveform(tag_config: TagConfig, ofdm_config: OfdmConfig,
                        packet: TagPacket, t: np.ndarray) -> np.ndarray:
    """Full reflection waveform Gamma(t) = x_pkt(t) * kappa(t) at times t.

    kappa is the true square clock at shift_hz + f_off_tag_hz (half period
    T_clk = 1/(2*F_clk)); sampling it meaningfully needs t far finer than the
    clock, which is why the link pipeline never calls this and works with
    :func:`band_coefficient` instead. CW mode holds x_pkt at gamma0; burst
    mode gates the whole product with the duty cycle.
    """
    t = np.asarray(t, dtype=float)
    f_clk = ofdm_config.shift_hz + tag_config.f_off_tag_hz
    if f_clk <= 0:
        raise ValueError("tag clock frequency must be positive")
    t_clk = 1.0 / (2.0 * f_clk)
    kappa = np.where(np.floor_divide(t, t_clk).astype(int) % 2 == 0, 1.0, -1.0)
    if tag_config.mode == "cw":
        x = np.full_like(t, tag_config.gamma0, dtype=complex)
    else:
        x = _x_pkt(t, packet.reflection_states(tag_config), tag_config.t_sym_s)
    return x * kappa * _burst_gate(t, tag_config)


def reflect(incident: np.ndarray, gamma: np.ndarray, structural: complex = 0.0) -> np.ndarray:
    """Tag output field: incident * (structural - Gamma)."""
    incident = np.asarray(incident, dtype=complex)
    gamma = np.asarray(gamma, dtype=complex)
    if gamma.shape not in ((), incident.shape):
        raise ValueError("gamma must be scalar or match the incident record")
    return incident * (structural - gamma)


def band_spectra(incident_freq: np.ndarray, state: complex, config: TagConfig) -> dict:
    """Per-band tag output spectra for one OFDM symbol.

    incident_freq is the spectrum reaching the tag (A order); state is the
    current reflection value. Only the clock fundamental is kept: the tag
    band-pass and the reader filters remove the 3rd and higher odd
    harmonics, and the even ones are null by clock symmetry.
    """
    y = np.asarray(incident_freq, dtype=complex)
    return {band: band_coefficient(band, config, state) * y for band in ("center", "lower", "upper")}


def state_stream(tag_config: TagConfig, ofdm_config: OfdmConfig, packet: TagPacket,
                 n_samples: int, start_time_s: float = 0.0) -> np.ndarray:
    """Symbol-rate reflection state x_pkt sampled on the simulation grid.

    This is the slow factor of Gamma (the clock factor is handled per band
    spectrally); values are the configured reflection coefficients, constant
    over each tag symbol, burst-gated when applicable.
    """
    t = start_time_s + np.arange(n_samples) / ofdm_config.grid_rate_hz
    if tag_config.mode == "cw":
        x = np.full(n_samples, tag_config.gamma0, dtype=complex)
    else:
        x = _x_pkt(t, packet.reflection_states(tag_config), tag_config.t_sym_s)
    return x * _burst_gate(t, tag_config)
