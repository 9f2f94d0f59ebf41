"""OFDM grid configuration and illumination symbol construction.

The illuminator sends a narrow OFDM block (N subcarriers, spacing deltaF)
with no cyclic prefix; the same symbol is repeated back to back so the
steady-state response is circular anyway. Subcarrier indices live on the
symmetric set A = {-(N-1)/2, ..., +(N-1)/2} and every frequency-domain
vector in this package is stored in ascending-A order unless noted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import speed_of_light as C0

from . import signalcore

BANDS = ("center", "lower", "upper")


@dataclass
class OfdmConfig:
    """Static parameters of the illumination grid and the reader bands.

    n_subcarriers     : N, odd
    spacing_hz        : subcarrier spacing deltaF
    carrier_hz        : illumination carrier (center-band RF center)
    shift_hz          : tag clock fundamental; side bands sit at carrier +/- shift
    clock_ratio       : integer ratio of tag clock to tag symbol rate
    sample_rate_hz    : hardware converter rate (metadata; must cover the band)
    fine_bins         : zero-padded IFFT size for delay-domain analysis, even
    oversample        : integer time-grid multiplier used by the sample pipeline
    """

    n_subcarriers: int = 23
    spacing_hz: float = 960e3
    carrier_hz: float = 897.5e6
    shift_hz: float = 45e6
    clock_ratio: int = 375
    sample_rate_hz: float = 61.44e6
    fine_bins: int = 4096
    oversample: int = 1

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_subcarriers % 2 == 0:
            raise ValueError("n_subcarriers must be odd and positive")
        if self.spacing_hz <= 0:
            raise ValueError("spacing_hz must be positive")
        if self.shift_hz < 0:
            raise ValueError("shift_hz must be non-negative")
        if self.bandwidth_hz > self.sample_rate_hz:
            raise ValueError("sample_rate_hz must cover the occupied bandwidth")
        if self.fine_bins < self.n_subcarriers or self.fine_bins % 2 != 0:
            raise ValueError("fine_bins must be even and >= n_subcarriers")
        if self.oversample < 1 or int(self.oversample) != self.oversample:
            raise ValueError("oversample must be a positive integer")
        if self.clock_ratio < 1 or int(self.clock_ratio) != self.clock_ratio:
            raise ValueError("clock_ratio must be a positive integer")

    # --- derived quantities -------------------------------------------------
    @property
    def bandwidth_hz(self) -> float:
        return self.n_subcarriers * self.spacing_hz

    @property
    def symbol_duration_s(self) -> float:
        return 1.0 / self.spacing_hz

    @property
    def subcarriers(self) -> np.ndarray:
        m = (self.n_subcarriers - 1) // 2
        return np.arange(-m, m + 1)

    @property
    def grid_rate_hz(self) -> float:
        """Simulation sample rate: one sample per 1/B, times oversample."""
        return self.bandwidth_hz * self.oversample

    @property
    def samples_per_symbol(self) -> int:
        return self.n_subcarriers * self.oversample

    @property
    def range_wrap_m(self) -> float:
        """Unambiguous bistatic range span c/deltaF."""
        return C0 / self.spacing_hz

    @property
    def fine_bin_m(self) -> float:
        """Distance per fine-grid delay bin, c/(fine_bins*deltaF)."""
        return C0 / (self.fine_bins * self.spacing_hz)

    def band_center_hz(self, band: str) -> float:
        if band == "center":
            return self.carrier_hz
        if band == "lower":
            return self.carrier_hz - self.shift_hz
        if band == "upper":
            return self.carrier_hz + self.shift_hz
        raise ValueError(f"unknown band {band!r}")

    def meters_to_grid(self, meters) -> np.ndarray:
        """Propagation length in meters -> delay in 1/B grid units."""
        return np.asarray(meters, dtype=float) / C0 * self.bandwidth_hz

    def grid_to_meters(self, delay) -> np.ndarray:
        return np.asarray(delay, dtype=float) * C0 / self.bandwidth_hz


@dataclass
class OfdmSymbol:
    """One illumination symbol: frequency view (A order) + time samples."""

    freq: np.ndarray
    time: np.ndarray
    oversample: int = 1


def a_to_fft(v: np.ndarray) -> np.ndarray:
    """Reorder a vector from ascending-A subcarrier order to FFT bin order."""
    return np.fft.ifftshift(v, axes=-1)


def fft_to_a(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`a_to_fft`."""
    return np.fft.fftshift(v, axes=-1)


def subcarrier_grid(config: OfdmConfig, band: str = "center") -> np.ndarray:
    """Absolute RF frequency of every subcarrier in the given band (A order)."""
    return config.band_center_hz(band) + config.subcarriers * config.spacing_hz


def _zadoff_chu(n: int, root: int) -> np.ndarray:
    if np.gcd(root, n) != 1:
        raise ValueError("zadoff-chu root must be coprime with the length")
    m = np.arange(n)
    return np.exp(-1j * np.pi * root * m * (m + 1) / n)


def _random_psk(n: int, order: int, rng) -> np.ndarray:
    k = signalcore.as_rng(rng).integers(0, order, size=n)
    return np.exp(1j * 2 * np.pi * (k + 0.5) / order)


def make_symbol(config: OfdmConfig, kind: str = "zadoff_chu", root: int = 1,
                seed=None, order: int = 4) -> OfdmSymbol:
    """Build one OFDM symbol.

    kind='zadoff_chu' fills the subcarriers with S_m = exp(-j pi root m(m+1)/N)
    (m indexes A in ascending order); constant modulus in both domains for odd
    N, which makes it the preamble/channel-sounding symbol of choice.
    kind='random_psk' draws unit-modulus PSK data from `seed`.
    """
    n = config.n_subcarriers
    if kind == "zadoff_chu":
        freq = _zadoff_chu(n, root)
    elif kind == "random_psk":
        freq = _random_psk(n, order, seed)
    else:
        raise ValueError(f"unknown symbol kind {kind!r}")
    time = _synthesize(freq, config.oversample)
    return OfdmSymbol(freq=freq, time=time, oversample=config.oversample)


def _synthesize(freq_a: np.ndarray, oversample: int) -> np.ndarray:
    """Unitary IDFT of the A-ordered spectrum zero-padded to N*oversample."""
    n = freq_a.shape[-1]
    m = (n - 1) // 2
    total = n * oversample
    spec = np.zeros(freq_a.shape[:-1] + (total,), dtype=complex)
    idx = np.mod(np.arange(-m, m + 1), total)
    spec[..., idx] = freq_a
    return signalcore.idft(spec)


def serialize(symbol: OfdmSymbol, repetitions: int) -> np.ndarray:
    """Tile the symbol back to back (no cyclic prefix)."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return np.tile(symbol.time, repetitions)
