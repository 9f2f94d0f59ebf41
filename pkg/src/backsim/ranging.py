"""Delay-domain processing: oversampled impulse responses and range readout.

The bistatic range of the tag is read from the *difference* between the
first-peak position of a side-band impulse response (illumination -> tag ->
reader) and the center-band one (illumination -> reader). The common timing
offset and any shared group delay cancel in the difference; what remains is
the extra flight length plus a per-band calibration constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.constants import speed_of_light as C0

from .waveform import OfdmConfig
from .receiver import FrontEndConfig
from .tag import clock_harmonic
from . import signalcore


class PeakNotFoundError(RuntimeError):
    """No impulse-response peak satisfied the detection rule."""


class EstimationFailedError(RuntimeError):
    """Subspace estimator could not produce a usable delay."""


@dataclass
class CirEstimate:
    band: str
    taps: np.ndarray
    grid_m: float

    @property
    def n_bins(self) -> int:
        return self.taps.size


@dataclass
class RangingConfig:
    """Knobs of the range readout.

    fine_bins : delay-grid size (None = take it from the OFDM config)
    a_min     : relative first-peak threshold, fraction of the band maximum
    d0_true   : known illuminator->reader separation in meters
    d_calib   : band -> calibration distance subtracted from the difference
    weights   : band -> combining weight (None = equal)
    """

    fine_bins: int | None = None
    a_min: float = 0.3
    d0_true: float = 0.0
    d_calib: dict = field(default_factory=dict)
    weights: dict | None = None


def oversampled_cir(h_hat: np.ndarray, config: OfdmConfig, band: str = "center",
                    fine_bins: int | None = None) -> CirEstimate:
    """Zero-pad the channel estimate symmetrically and go to the delay domain.

    The N subcarrier estimates (A order) are centered in a length-N' vector
    (DC lands on bin N'/2) and inverse-transformed with the unitary DFT, so
    tap energy equals subcarrier energy exactly. One bin spans
    c/(N' deltaF) meters.
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    n = config.n_subcarriers
    if h_hat.shape != (n,):
        raise ValueError("channel estimate must have one entry per subcarrier")
    n_fine = config.fine_bins if fine_bins is None else fine_bins
    if n_fine < n or n_fine % 2 != 0:
        raise ValueError("fine grid must be even and >= N")
    z = (n_fine - n + 1) // 2
    padded = np.zeros(n_fine, dtype=complex)
    padded[z:z + n] = h_hat
    taps = signalcore.idft(padded)
    grid_m = C0 / (n_fine * config.spacing_hz)
    return CirEstimate(band=band, taps=taps, grid_m=grid_m)


def _dirichlet_ratio(n: int, n_fine: int, x: np.ndarray) -> np.ndarray:
    """Real symmetric-index Dirichlet sum sum_{|m|<=(N-1)/2} e^{-j2pi m x}."""
    d = signalcore.dirichlet(n, n_fine, x)
    return np.real(d * np.exp(1j * np.pi * (n - 1) * x))


def _band_tone_sum(delays, gains, config: OfdmConfig, band: str,
                   extra_delay: float, n_fine: int) -> np.ndarray:
    """sum_l g_l C_band(tau_l) R(n'/N' - (tau_l + extra)/N) over the fine grid."""
    n_prime = np.arange(n_fine)
    fb = config.band_center_hz(band) / config.bandwidth_hz
    acc = np.zeros(n_fine, dtype=complex)
    for tau, g in zip(np.atleast_1d(delays), np.atleast_1d(gains)):
        carrier = np.exp(-2j * np.pi * fb * tau)
        x = n_prime / n_fine - (tau + extra_delay) / config.n_subcarriers
        acc += g * carrier * _dirichlet_ratio(config.n_subcarriers, n_fine, x)
    return acc


def _flat_gain(fe: FrontEndConfig, band: str) -> complex:
    gv = fe.gain(band)
    if gv is None:
        return 1.0 + 0j
    gv = np.asarray(gv, dtype=complex)
    if not np.allclose(gv, gv.flat[0]):
        raise ValueError("analytic route assumes a flat band gain")
    return complex(gv.flat[0])


def analytic_cir(channels: tuple, config: OfdmConfig, band: str,
                 fe: FrontEndConfig | None = None, zeta: float = 0.0,
                 phi_tx: float = 0.0, fine_bins: int | None = None) -> CirEstimate:
    """Predicted oversampled impulse response from the tap lists alone.

    Center band: the direct-link taps blurred to Dirichlet lobes, shifted by
    the uncorrected timing offset plus the band group delay. Side bands: the
    circular convolution of the illumination->tag and tag->reader lobe sums,
    scaled by the first clock harmonic. The (-1)^{n'} factor comes from the
    DC-centered spectrum stacking of :func:`oversampled_cir`; both routes
    keep it so complex (not just magnitude) agreement is meaningful.
    """
    h0, h1, h2 = channels
    fe = fe or FrontEndConfig()
    n_fine = config.fine_bins if fine_bins is None else fine_bins
    n_prime = np.arange(n_fine)
    stacking = (-1.0) ** n_prime
    dphi = phi_tx - fe.phase(band)
    if band == "center":
        a0 = 0.5 * _flat_gain(fe, band) * np.exp(1j * dphi)
        lobes = _band_tone_sum(h0.delays, h0.gains, config, band,
                               zeta + fe.group_delay(band), n_fine)
        taps = stacking * a0 / np.sqrt(n_fine) * lobes
    elif band in ("lower", "upper"):
        # clock fundamental: reflected field carries -state * K(-/+ shift)
        harm = -np.conj(clock_harmonic(1)) if band == "lower" else -clock_harmonic(1)
        a2 = 0.5 * harm * _flat_gain(fe, band) * np.exp(1j * dphi)
        lobes1 = _band_tone_sum(h1.delays, h1.gains, config, "center", 0.0, n_fine)
        lobes2 = _band_tone_sum(h2.delays, h2.gains, config, band,
                                zeta + fe.group_delay(band), n_fine)
        conv = np.fft.ifft(np.fft.fft(lobes1) * np.fft.fft(lobes2))
        taps = stacking * a2 / (n_fine * np.sqrt(n_fine)) * conv
    else:
        raise ValueError(f"unknown band {band!r}")
    grid_m = C0 / (n_fine * config.spacing_hz)
    return CirEstimate(band=band, taps=taps, grid_m=grid_m)


def first_peak(cir: CirEstimate, a_min: float = 0.3, start: int = 0) -> int:
    """Earliest local magnitude maximum above the relative threshold.

    A bin qualifies when it strictly exceeds its predecessor, is >= its
    successor (circular neighbours), and reaches a_min times the global
    maximum. The scan starts at `start` and does not wrap past the end.
    """
    mag = np.abs(cir.taps)
    n = mag.size
    if not 0 <= start < n:
        raise ValueError("start outside the delay grid")
    floor = a_min * mag.max()
    for i in range(start, n):
        if mag[i] >= floor and mag[i] > mag[(i - 1) % n] and mag[i] >= mag[(i + 1) % n]:
            return i
    raise PeakNotFoundError(f"no qualifying peak from bin {start} on")


def ir_first_range(cir_center: CirEstimate, cir_band: CirEstimate,
                   rconfig: RangingConfig, config: OfdmConfig) -> float:
    """Bistatic range from the first-peak position difference.

    d_hat = (d0_true + (i_band - i0) * bin - d_calib[band]) mod c/deltaF

    The side-band scan starts one bin past the center peak: the tag detour is
    never shorter than the direct path. Calibration is subtracted exactly
    once.
    """
    i0 = first_peak(cir_center, rconfig.a_min)
    ib = first_peak(cir_band, rconfig.a_min, start=i0 + 1)
    delta = (ib - i0) * cir_band.grid_m
    d_cal = float(rconfig.d_calib.get(cir_band.band, 0.0))
    return float(np.mod(rconfig.d0_true + delta - d_cal, config.range_wrap_m))


def combine_ranges(per_band: dict, weights: dict | None = None) -> float:
    """Weighted mean of the per-band range estimates (equal weights default)."""
    if not per_band:
        raise ValueError("nothing to combine")
    bands = sorted(per_band)
    d = np.array([per_band[b] for b in bands], dtype=float)
    if weights is None:
        w = np.ones_like(d)
    else:
        w = np.array([weights.get(b, 0.0) for b in bands], dtype=float)
    if w.sum() <= 0:
        raise ValueError("weights must have positive mass")
    return float(np.sum(w * d) / np.sum(w))


def music_delay(h_hat: np.ndarray, model_order: int, config: OfdmConfig,
                fine_bins: int | None = None, subarray: int | None = None,
                rel_threshold: float = 0.3):
    """Super-resolved delays from one channel-estimate snapshot.

    Forward-backward spatial smoothing over the subcarrier aperture gives the
    sample covariance; the noise subspace is scanned on the same fine delay
    grid as the oversampled impulse response. Returns (delay of the earliest
    qualifying pseudo-spectrum peak in 1/B units, full pseudo-spectrum).
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    n = config.n_subcarriers
    if h_hat.shape != (n,):
        raise ValueError("channel estimate must have one entry per subcarrier")
    m = subarray if subarray is not None else int(np.ceil(2 * n / 3))
    if not 2 <= m <= n:
        raise ValueError("subarray length out of range")
    if model_order < 1 or model_order >= m:
        raise EstimationFailedError("model order must be in [1, subarray)")
    n_snap = n - m + 1
    snaps = np.lib.stride_tricks.sliding_window_view(h_hat, m)  # (n_snap, m)
    r = (snaps.T @ snaps.conj()) / n_snap
    j = np.eye(m)[::-1]
    r_fb = 0.5 * (r + j @ r.conj() @ j)
    evals, evecs = np.linalg.eigh(r_fb)
    noise = evecs[:, : m - model_order]          # ascending eigenvalues
    n_fine = config.fine_bins if fine_bins is None else fine_bins
    tau = np.arange(n_fine) / n_fine * n         # [0, N) grid units
    steer = np.exp(-2j * np.pi * np.outer(np.arange(m), tau) / n)
    proj = np.abs(noise.conj().T @ steer) ** 2
    spectrum = 1.0 / np.maximum(proj.sum(axis=0), 1e-300)
    floor = rel_threshold * spectrum.max()
    for i in range(n_fine):
        if (spectrum[i] >= floor and spectrum[i] > spectrum[(i - 1) % n_fine]
                and spectrum[i] >= spectrum[(i + 1) % n_fine]):
            return float(tau[i]), spectrum
    raise EstimationFailedError("no pseudo-spectrum peak above threshold")


def music_range(h_center: np.ndarray, h_band: np.ndarray, band: str,
                rconfig: RangingConfig, config: OfdmConfig,
                order_center: int = 1, order_band: int = 1,
                fine_bins: int | None = None) -> float:
    """Range readout like :func:`ir_first_range` but with subspace delays."""
    tau0, _ = music_delay(h_center, order_center, config, fine_bins)
    taub, _ = music_delay(h_band, order_band, config, fine_bins)
    delta = np.mod(taub - tau0, config.n_subcarriers) * C0 / config.bandwidth_hz
    d_cal = float(rconfig.d_calib.get(band, 0.0))
    return float(np.mod(rconfig.d0_true + delta - d_cal, config.range_wrap_m))


def calibrate(reference_cirs: dict, a_min: float = 0.3) -> dict:
    """Measure per-band calibration distances from a zero-delay reference.

    reference_cirs maps band -> CirEstimate captured with all propagation
    delays forced to zero, so any residual peak offset between a side band
    and the center band is pure hardware (group-delay mismatch). Returns
    band -> meters for every non-center band present.
    """
    if "center" not in reference_cirs:
        raise ValueError("reference needs the center band")
    i0 = first_peak(reference_cirs["center"], a_min)
    out = {}
    for band, cir in reference_cirs.items():
        if band == "center":
            continue
        ib = first_peak(cir, a_min)
        # wrap-aware signed offset: hardware skews are far below half the grid
        n = cir.n_bins
        off = (ib - i0 + n // 2) % n - n // 2
        out[band] = float(off * cir.grid_m)
    return out
