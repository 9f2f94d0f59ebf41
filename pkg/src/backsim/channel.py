"""Multipath channels for the three bistatic links.

Link 0: illuminator -> reader (direct leakage/LoS path plus clutter)
Link 1: illuminator -> tag
Link 2: tag -> reader

Each link is a sparse tap list h(t) = sum_l gain_l * delta(t - t_l). Delays
are stored in units of 1/B (B = occupied bandwidth) so a delay of 1.0 is one
critically-sampled grid step; sub-sample values are kept exactly and realized
in the frequency domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import speed_of_light as C0

from .waveform import OfdmConfig
from . import signalcore

LINKS = ("tx_rx", "tx_tag", "tag_rx")


class DegenerateGeometryError(ValueError):
    """Two scene nodes coincide; path lengths would be ill-defined."""


@dataclass
class PathTap:
    length_m: float
    delay: float          # in 1/B grid units
    gain: complex


@dataclass
class MultipathChannel:
    paths: list
    link: str

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if not self.paths:
            raise ValueError("channel needs at least one path")

    @property
    def lengths_m(self) -> np.ndarray:
        return np.array([p.length_m for p in self.paths])

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths])

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass
class Geometry:
    """2-D scene: illuminator, reader, tag, and point scatterers."""

    tx: np.ndarray
    rx: np.ndarray
    tag: np.ndarray
    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.tx = np.asarray(self.tx, dtype=float)
        self.rx = np.asarray(self.rx, dtype=float)
        self.tag = np.asarray(self.tag, dtype=float)
        self.scatterers = np.asarray(self.scatterers, dtype=float).reshape(-1, 2)


def make_channel(lengths_m, gains, config: OfdmConfig, link: str) -> MultipathChannel:
    """Build a channel directly from tap lists (lengths in meters)."""
    lengths_m = np.atleast_1d(np.asarray(lengths_m, dtype=float))
    gains = np.atleast_1d(np.asarray(gains, dtype=complex))
    if lengths_m.shape != gains.shape:
        raise ValueError("lengths and gains must match")
    order = np.argsort(lengths_m)
    taps = [PathTap(length_m=float(lengths_m[i]),
                    delay=float(config.meters_to_grid(lengths_m[i])),
                    gain=complex(gains[i]))
            for i in order]
    return MultipathChannel(paths=taps, link=link)


def _dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def geometry_to_channels(geometry: Geometry, config: OfdmConfig, rng=None):
    """Expand a scene into the three link channels.

    Every scatterer contributes one single-bounce path per link. The LoS tap
    has unit magnitude; bounce taps are scaled by d_LoS/d_path so longer
    detours are weaker. All tap phases are i.i.d. uniform.

    Returns (h_tx_rx, h_tx_tag, h_tag_rx).
    """
    rng = signalcore.as_rng(rng)
    nodes = {"tx": geometry.tx, "rx": geometry.rx, "tag": geometry.tag}
    for a in ("tx", "rx", "tag"):
        for b in ("rx", "tag"):
            if a != b and _dist(nodes[a], nodes[b]) == 0.0:
                raise DegenerateGeometryError(f"{a} and {b} coincide")
    for s in geometry.scatterers:
        for name, p in nodes.items():
            if _dist(s, p) == 0.0:
                raise DegenerateGeometryError(f"scatterer coincides with {name}")

    ends = {"tx_rx": (geometry.tx, geometry.rx),
            "tx_tag": (geometry.tx, geometry.tag),
            "tag_rx": (geometry.tag, geometry.rx)}
    out = []
    for link in LINKS:
        a, b = ends[link]
        d_los = _dist(a, b)
        lengths = [d_los]
        for s in geometry.scatterers:
            lengths.append(_dist(a, s) + _dist(s, b))
        lengths = np.array(lengths)
        mags = d_los / lengths           # LoS -> 1 by construction
        phases = rng.uniform(0.0, 2 * np.pi, size=lengths.size)
        gains = mags * np.exp(1j * phases)
        out.append(make_channel(lengths, gains, config, link))
    return tuple(out)


def _band_cycles_per_grid(config: OfdmConfig, band: str) -> float:
    """Band RF center expressed in cycles per 1/B grid unit."""
    return config.band_center_hz(band) / config.bandwidth_hz


def cfr(channel: MultipathChannel, config: OfdmConfig, band: str = "center") -> np.ndarray:
    """Channel frequency response on the subcarrier grid (A order).

    H(n) = sum_l gain_l * exp(-j 2 pi (F_band/B + n/N) tau_l)

    with tau_l in 1/B units, so F_band/B*tau is the carrier phase in cycles
    and n/N*tau the baseband linear phase.
    """
    tau = channel.delays
    g = channel.gains
    n = config.subcarriers
    fb = _band_cycles_per_grid(config, band)
    phase = fb * tau[None, :] + np.outer(n, tau) / config.n_subcarriers
    return (np.exp(-2j * np.pi * phase) * g[None, :]).sum(axis=1)


def cfr_factored(channel: MultipathChannel, config: OfdmConfig, band: str = "center") -> np.ndarray:
    """Same response assembled from its structured factors.

    Baseband steering matrix F (N x L), carrier diagonal C, and - for the
    shifted bands - a shift diagonal D applied directly (lower) or
    conjugated (upper). Kept separate from :func:`cfr` on purpose: the pair
    forms a two-route consistency check.
    """
    tau = channel.delays
    g = channel.gains
    n = config.subcarriers
    f_mat = np.exp(-2j * np.pi * np.outer(n, tau) / config.n_subcarriers)
    c_diag = np.exp(-2j * np.pi * (config.carrier_hz / config.bandwidth_hz) * tau)
    if band == "center":
        d_diag = np.ones_like(tau, dtype=complex)
    elif band == "lower":
        d_diag = np.exp(+2j * np.pi * (config.shift_hz / config.bandwidth_hz) * tau)
    elif band == "upper":
        d_diag = np.conj(np.exp(+2j * np.pi * (config.shift_hz / config.bandwidth_hz) * tau))
    else:
        raise ValueError(f"unknown band {band!r}")
    return f_mat @ (c_diag * d_diag * g)


def apply_channel(samples: np.ndarray, channel: MultipathChannel, config: OfdmConfig,
                  band: str = "center", mode: str = "linear") -> np.ndarray:
    """Push a baseband record through the channel.

    mode='linear'   zero-pads past the longest delay and realizes the tap sum
                    in the frequency domain; exact for delays on the sample
                    grid, bandlimited-interpolation semantics otherwise.
                    Output is input length + pad.
    mode='periodic' treats the record as one period of a periodic stream and
                    multiplies its spectrum by the true channel response;
                    exact circular steady state, output length = input length.
    """
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != 1 or samples.size == 0:
        raise ValueError("apply_channel expects a non-empty 1-D record")
    tau_samples = channel.delays * config.oversample
    t_secs = channel.delays / config.bandwidth_hz
    g = channel.gains
    center = config.band_center_hz(band)
    rate = config.grid_rate_hz
    if mode == "periodic":
        total = samples.size
    elif mode == "linear":
        total = samples.size + int(np.ceil(tau_samples.max())) + 1
    else:
        raise ValueError(f"unknown mode {mode!r}")
    spec = np.fft.fft(samples, n=total)
    f = np.fft.fftfreq(total, d=1.0 / rate)
    resp = (np.exp(-2j * np.pi * np.outer(center + f, t_secs)) @ g)
    return np.fft.ifft(spec * resp)
