"""Triple-band reader: analog front end, synchronization, OFDM demodulation.

The reader captures three baseband records (center band at the illumination
carrier, lower/upper at carrier -/+ shift). Nothing is assumed synchronized:
each band has its own gain/group delay/phase, the common oscillator offset
differs from the illuminator's, and the tag clock error splits the apparent
CFO of the side bands away from the center one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .waveform import OfdmConfig, BANDS
from . import signalcore


class NoSignalError(RuntimeError):
    """Timing search found nothing that looks like the template."""


class NoPacketError(RuntimeError):
    """No tag packet preamble found in the symbol stream."""


@dataclass
class FrontEndConfig:
    """Per-band front-end impairments.

    gains        : band -> per-subcarrier complex gain (A order) or None=flat
    group_delays : band -> delay in 1/B units (pure baseband linear phase)
    noise_var    : band -> complex AWGN variance per sample
    phases       : band -> downconversion phase phi_RX
    f_off_rx_hz  : common reader oscillator offset
    adc_bits     : mid-rise quantizer resolution, None = ideal
    """

    gains: dict = field(default_factory=dict)
    group_delays: dict = field(default_factory=dict)
    noise_var: dict = field(default_factory=dict)
    phases: dict = field(default_factory=dict)
    f_off_rx_hz: float = 0.0
    adc_bits: int | None = None

    def gain(self, band):
        return self.gains.get(band)

    def group_delay(self, band) -> float:
        return float(self.group_delays.get(band, 0.0))

    def noise(self, band) -> float:
        return float(self.noise_var.get(band, 0.0))

    def phase(self, band) -> float:
        return float(self.phases.get(band, 0.0))


@dataclass
class BandCapture:
    band: str
    samples: np.ndarray
    snr_true: float = np.inf


@dataclass
class SyncState:
    k0: int = 0
    zeta: float = 0.0
    cfo_est: dict = field(default_factory=dict)
    cfo_residual: dict = field(default_factory=dict)
    phase_offsets: dict = field(default_factory=dict)


def quantize_midrise(samples: np.ndarray, bits: int) -> np.ndarray:
    """Mid-rise I/Q quantizer, full scale = 4x the complex RMS of the record."""
    if bits < 1:
        raise ValueError("adc needs at least 1 bit")
    rms = np.sqrt(np.mean(np.abs(samples) ** 2))
    if rms == 0:
        return np.zeros_like(samples)
    fs = 4.0 * rms
    step = 2.0 * fs / (2 ** bits)

    def q(u):
        lev = np.floor(u / step) * step + step / 2
        return np.clip(lev, -fs + step / 2, fs - step / 2)

    return q(samples.real) + 1j * q(samples.imag)


def band_cfo_hz(band: str, f_off_rx_hz: float, f_off_tag_hz: float) -> float:
    """Net oscillator offset seen in one band.

    The tag clock error shifts the side bands in opposite directions while
    the reader offset is common: lower = rx - tag, upper = rx + tag.
    """
    if band == "center":
        return f_off_rx_hz
    if band == "lower":
        return f_off_rx_hz - f_off_tag_hz
    if band == "upper":
        return f_off_rx_hz + f_off_tag_hz
    raise ValueError(f"unknown band {band!r}")


def front_end(band_inputs: dict, config: OfdmConfig, fe: FrontEndConfig,
              f_off_tag_hz: float = 0.0, rng=None) -> dict:
    """Run each band's incident baseband record through the reader front end.

    Order: per-subcarrier gain + group delay (one spectrum pass), oscillator
    rotation exp(j 2 pi f_net t) * exp(-j phi_band), additive noise, ADC.
    Gains are defined at the subcarrier frequencies and held zero-order
    between them; the group delay is a pure linear phase across the record.
    Returns band -> BandCapture with the pre-noise/noise power ratio.
    """
    rng = signalcore.as_rng(rng)
    rate = config.grid_rate_hz
    out = {}
    for band, x in band_inputs.items():
        x = np.asarray(x, dtype=complex)
        L = x.size
        f = np.fft.fftfreq(L, d=1.0 / rate)
        resp = np.exp(-2j * np.pi * f * fe.group_delay(band) / config.bandwidth_hz)
        gv = fe.gain(band)
        if gv is not None:
            gv = np.asarray(gv, dtype=complex)
            if gv.shape != (config.n_subcarriers,):
                raise ValueError("gain vector must have one entry per subcarrier")
            m = (config.n_subcarriers - 1) // 2
            idx = np.clip(np.round(f / config.spacing_hz).astype(int), -m, m) + m
            resp = resp * gv[idx]
        y = np.fft.ifft(np.fft.fft(x) * resp)
        f_net = band_cfo_hz(band, fe.f_off_rx_hz, f_off_tag_hz)
        k = np.arange(L)
        y = y * np.exp(2j * np.pi * f_net * k / rate) * np.exp(-1j * fe.phase(band))
        nv = fe.noise(band)
        p_sig = float(np.mean(np.abs(y) ** 2))
        y = y + signalcore.awgn(L, nv, rng)
        if fe.adc_bits is not None:
            y = quantize_midrise(y, fe.adc_bits)
        snr = p_sig / nv if nv > 0 else np.inf
        out[band] = BandCapture(band=band, samples=y, snr_true=snr)
    return out


def estimate_cfo(samples: np.ndarray, period: int) -> float:
    """CFO from the phase drift between repeats of a periodic record.

    Returns the offset normalized to the sample rate (cycles/sample);
    unambiguous for |f| < 1/(2*period).
    """
    samples = np.asarray(samples)
    if period < 1 or samples.size < 2 * period:
        raise ValueError("need at least two repetitions of the period")
    acc = np.vdot(samples[:-period], samples[period:])
    if acc == 0:
        raise NoSignalError("no correlated energy at the given period")
    return float(np.angle(acc) / (2 * np.pi * period))


def timing_sync(samples: np.ndarray, template: np.ndarray,
                min_peak_ratio: float = 6.0) -> SyncState:
    """Locate the template in the record; sub-sample offset by parabola fit.

    The fractional part zeta interpolates the correlation peak from its two
    neighbours; with a half-sample true delay it lands near +/-0.5.
    """
    k0, mags = signalcore.sliding_correlate(samples, template)
    floor = np.median(mags)
    if floor > 0 and mags[k0] < min_peak_ratio * floor:
        raise NoSignalError("correlation peak below detection threshold")
    zeta = 0.0
    if 0 < k0 < mags.size - 1:
        ym, y0, yp = mags[k0 - 1], mags[k0], mags[k0 + 1]
        den = ym - 2 * y0 + yp
        if den != 0:
            zeta = float(np.clip(0.5 * (ym - yp) / den, -0.5, 0.5))
    return SyncState(k0=int(k0), zeta=zeta)


def demod_ofdm(samples: np.ndarray, k0: int, config: OfdmConfig,
               n_symbols: int | None = None) -> np.ndarray:
    """Slice symbol windows from k0 on and DFT each to the subcarrier grid.

    Returns an (n_symbols, N) array in ascending-A order. With an
    oversampled grid the DFT runs at the full window size and only the
    occupied bins are kept.
    """
    samples = np.asarray(samples, dtype=complex)
    span = config.samples_per_symbol
    if k0 < 0 or k0 + span > samples.size:
        raise ValueError("k0 leaves no room for a full symbol")
    avail = (samples.size - k0) // span
    if n_symbols is None:
        n_symbols = avail
    if n_symbols > avail or n_symbols < 1:
        raise ValueError("not enough samples for the requested symbol count")
    win = samples[k0:k0 + n_symbols * span].reshape(n_symbols, span)
    spec = signalcore.dft(win)
    idx = np.mod(config.subcarriers, span)
    return spec[:, idx]


def ici_matrix(f_norm: float, n: int) -> np.ndarray:
    """Inter-carrier interference operator for a residual CFO.

    Maps the clean A-ordered symbol vector to what the demodulator sees when
    the time record is rotated by exp(j 2 pi f_norm k) (f normalized to the
    critically-sampled grid). Entry (n1, n2) follows from the window DFT of
    a rotated tone; rows have exactly unit l2 norm, and f_norm = 0 gives the
    identity.
    """
    if n < 1:
        raise ValueError("n must be positive")
    ns = np.arange(-(n - 1) // 2, (n - 1) // 2 + 1)
    v = ns[None, :] - ns[:, None] + n * f_norm   # n2 - n1 + N f
    num = np.sin(np.pi * v)
    den = np.sin(np.pi * v / n)
    near = np.isclose(den, 0.0, atol=1e-12)
    ratio = np.empty_like(v)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio[~near] = num[~near] / den[~near]
    if np.any(near):
        vr = np.round(v[near]).astype(int)
        ratio[near] = n * (-1.0) ** ((n - 1) * vr)
    return np.exp(1j * np.pi * (n - 1) * v / n) * ratio / n


def estimate_channels(demodulated: np.ndarray, illum_freq: np.ndarray) -> np.ndarray:
    """Per-subcarrier channel estimate: received spectrum over known symbol."""
    s = np.asarray(illum_freq, dtype=complex)
    if np.any(np.abs(s) < 1e-12):
        raise ValueError("illumination symbol has (near) empty subcarriers")
    return np.asarray(demodulated, dtype=complex) / s


@dataclass
class TagDecodeResult:
    bits: np.ndarray
    start_symbol: int
    mrc_phase: float
    soft: np.ndarray
    channel_minus: np.ndarray
    channel_plus: np.ndarray


def _scalar_stream(h_stream: np.ndarray, reference: np.ndarray | None) -> np.ndarray:
    """Collapse per-symbol channel estimates to scalars along a reference.

    Without a reference the dominant left singular vector of the stacked
    stream serves as one; the packet modulation only flips its sign, so the
    subspace is rank one up to noise.
    """
    if reference is None:
        u, _, _ = np.linalg.svd(h_stream.T, full_matrices=False)
        reference = u[:, 0]
    return h_stream @ np.conj(reference)


def extract_tag_symbols(h_minus: np.ndarray, h_plus: np.ndarray,
                        packet, tag_config, ofdm_config: OfdmConfig,
                        oracle_channels: tuple | None = None,
                        start: int | None = None,
                        min_peak_ratio: float = 3.0,
                        track_phase: bool = False) -> TagDecodeResult:
    """Decode the tag packet from the two side-band channel-estimate streams.

    h_minus/h_plus are (K, N) per-OFDM-symbol channel estimates. The packet
    preamble is located on a per-symbol scalar stream, the packet-level
    channels are re-estimated coherently over the preamble (or taken from
    oracle_channels), both bands are maximum-ratio combined with a phase
    measured on the preamble, and a matched filter spanning one tag symbol
    precedes the bit decisions.
    """
    h_minus = np.atleast_2d(np.asarray(h_minus, dtype=complex))
    h_plus = np.atleast_2d(np.asarray(h_plus, dtype=complex))
    if h_minus.shape != h_plus.shape:
        raise ValueError("band streams must have the same shape")
    k_sym = tag_config.symbols_per_tag_symbol(ofdm_config)
    sym = packet.symbols.astype(float)
    need = packet.n_symbols * k_sym
    total = h_minus.shape[0]
    if total < need:
        raise NoPacketError("record shorter than one packet")

    ref_m = oracle_channels[0] if oracle_channels is not None else None
    ref_p = oracle_channels[1] if oracle_channels is not None else None
    z_m = _scalar_stream(h_minus, ref_m)
    z_p = _scalar_stream(h_plus, ref_p)

    if start is None:
        tpl = np.repeat(sym[:packet.preamble.size], k_sym)
        prof = None
        for z in (z_m, z_p):
            _, mags = signalcore.sliding_correlate(z, tpl.astype(complex))
            prof = mags if prof is None else prof + mags
        start = int(np.argmax(prof))
        floor = np.median(prof)
        if start + need > total or (floor > 0 and prof[start] < min_peak_ratio * floor):
            raise NoPacketError("preamble correlation too weak")
    elif start + need > total:
        raise NoPacketError("packet does not fit at the given start")

    pre_span = packet.preamble.size * k_sym
    signs = np.repeat(sym[:packet.preamble.size], k_sym)
    if oracle_channels is not None:
        hp_m, hp_p = np.asarray(ref_m, dtype=complex), np.asarray(ref_p, dtype=complex)
    else:
        seg_m = h_minus[start:start + pre_span]
        seg_p = h_plus[start:start + pre_span]
        hp_m = (signs[:, None] * seg_m).mean(axis=0)
        hp_p = (signs[:, None] * seg_p).mean(axis=0)

    x_m = h_minus[start:start + need] @ np.conj(hp_m)
    x_p = h_plus[start:start + need] @ np.conj(hp_p)
    if oracle_channels is not None:
        # projections on the exact channels are already co-phased
        mrc = 0.0
    else:
        pre = slice(0, pre_span)
        mrc = float(np.angle(np.vdot(x_m[pre], x_p[pre])))
    combined = x_p + x_m * np.exp(1j * mrc)

    mf = combined.reshape(packet.n_symbols, k_sym).sum(axis=1)
    if track_phase:
        theta = 0.0
        out = np.empty_like(mf)
        for i, vraw in enumerate(mf):
            v = vraw * np.exp(-1j * theta)
            d = 1.0 if v.real >= 0 else -1.0
            theta += 0.25 * float(np.angle(v * d))
            out[i] = v
        mf = out
    payload = mf[packet.preamble.size:]
    bits = (payload.real < 0).astype(int)
    return TagDecodeResult(bits=bits, start_symbol=start, mrc_phase=mrc,
                           soft=mf, channel_minus=hp_m, channel_plus=hp_p)


def estimate_snr(p_signal_plus_noise: float, p_noise: float,
                 t_sym_s: float, t_ofdm_s: float) -> float:
    """Per-bit SNR from on/off power measurements.

    (P_on/P_off - 1) removes the noise floor; the matched filter over one
    tag symbol adds the Tsym/Tofdm processing gain. Negative excess power
    (heavy noise) is clamped to zero with a warning.
    """
    if p_noise <= 0:
        raise ValueError("noise power must be positive")
    if t_sym_s <= 0 or t_ofdm_s <= 0 or t_sym_s < t_ofdm_s:
        raise ValueError("need t_sym_s >= t_ofdm_s > 0")
    excess = p_signal_plus_noise / p_noise - 1.0
    if excess < 0:
        warnings.warn("measured power below the noise floor; clamping SNR to 0")
        excess = 0.0
    return excess * (t_sym_s / t_ofdm_s)
