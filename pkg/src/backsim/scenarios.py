"""Scene assembly and end-to-end link composition.

Two backends coexist deliberately. The sample pipeline synthesizes the
illumination, pushes it through the tap channels, applies the tag reflection
and the reader front end, and demodulates; it is the ground truth. The model
backend writes the per-symbol channel estimates directly from the
frequency-domain link model with injected impairments; the equivalence of
the two is established by the impulse-response validation, after which the
sweep experiments use the cheaper model route.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import waveform, channel, tag, receiver, ranging, signalcore
from .waveform import OfdmConfig, BANDS
from .channel import Geometry, MultipathChannel
from .tag import TagConfig, TagPacket
from .receiver import FrontEndConfig, SyncState

TX_POS = np.array([-8.0, 0.0])
RX_POS = np.array([8.0, 0.0])
TAG_BOX = ((-9.0, 9.0), (-8.0, 8.0))
SCATTER_EXTENT = 6.0


@dataclass
class LinkScenario:
    """Everything one link simulation needs."""

    ofdm: OfdmConfig
    tag: TagConfig
    fe: FrontEndConfig
    channels: tuple
    phi_tx: float = 0.0
    packet: TagPacket | None = None
    geometry: Geometry | None = None

    @property
    def truth(self) -> dict:
        """Ground-truth LoS distances in meters."""
        h0, h1, h2 = self.channels
        return {"d0": float(h0.lengths_m[0]),
                "d1": float(h1.lengths_m[0]),
                "d2": float(h2.lengths_m[0]),
                "d12": float(h1.lengths_m[0] + h2.lengths_m[0])}


def sample_geometry(rng, n_scatterers: int, tag_box=TAG_BOX,
                    tx=TX_POS, rx=RX_POS, extent: float = SCATTER_EXTENT) -> Geometry:
    """Random scene: tag uniform in its box, scatterers around the centroid."""
    rng = signalcore.as_rng(rng)
    tag_pos = np.array([rng.uniform(*tag_box[0]), rng.uniform(*tag_box[1])])
    mid = (np.asarray(tx) + np.asarray(rx) + tag_pos) / 3.0
    sc = mid + rng.uniform(-extent, extent, size=(n_scatterers, 2))
    return Geometry(tx=np.asarray(tx, float), rx=np.asarray(rx, float),
                    tag=tag_pos, scatterers=sc)


def band_inputs(scenario: LinkScenario, symbol: waveform.OfdmSymbol,
                n_reps: int, mode: str = "periodic") -> dict:
    """Incident baseband record at each reader band input.

    The transmit record carries the 1/2 analytic-signal factor and the
    illuminator phase once; the center band superposes the direct link and
    the structural tag echo, the side bands carry the clock-translated
    reflection (first harmonic) through the tag->reader channel. Packet
    streams are only meaningful in 'linear' mode; the periodic shortcut is
    for repetitive (CW-tag) records.
    """
    cfg = scenario.ofdm
    h0, h1, h2 = scenario.channels
    tx = 0.5 * np.exp(1j * scenario.phi_tx) * waveform.serialize(symbol, n_reps)
    y0 = channel.apply_channel(tx, h0, cfg, "center", mode)
    y1 = channel.apply_channel(tx, h1, cfg, "center", mode)
    pkt = scenario.packet if scenario.packet is not None else tag.make_packet(seed=0)
    out = {}
    for b in BANDS:
        if b == "center":
            rx_in = y0
            if scenario.tag.structural != 0:
                echo = channel.apply_channel(scenario.tag.structural * y1, h2, cfg, b, mode)
                L = max(rx_in.size, echo.size)
                rx_in = np.pad(rx_in, (0, L - rx_in.size)) + np.pad(echo, (0, L - echo.size))
        else:
            unit = tag.band_coefficient(b, scenario.tag, state=1.0)
            states = tag.state_stream(scenario.tag, cfg, pkt, y1.size)
            rx_in = channel.apply_channel(unit * states * y1, h2, cfg, b, mode)
        out[b] = rx_in
    return out


def run_capture(scenario: LinkScenario, symbol: waveform.OfdmSymbol, n_reps: int,
                mode: str = "periodic", rng=None) -> dict:
    inputs = band_inputs(scenario, symbol, n_reps, mode)
    return receiver.front_end(inputs, scenario.ofdm, scenario.fe,
                              f_off_tag_hz=scenario.tag.f_off_tag_hz, rng=rng)


def pipeline_channel_estimates(scenario: LinkScenario, n_avg: int, rng=None,
                               correct_cfo: bool = False, align_phase: bool = True,
                               symbol: waveform.OfdmSymbol | None = None):
    """Full sample-pipeline channel estimates, averaged over n_avg symbols.

    The record starts on a symbol boundary (known-timing validation mode);
    per-symbol estimates are phase-aligned to the first symbol before
    averaging so an uncorrected residual CFO costs ICI but not a global
    rotation. Returns ({band: H_hat}, SyncState).
    """
    cfg = scenario.ofdm
    if symbol is None:
        symbol = waveform.make_symbol(cfg, "zadoff_chu")
    caps = run_capture(scenario, symbol, n_avg, mode="periodic", rng=rng)
    span = cfg.samples_per_symbol
    hhats = {}
    sync = SyncState(k0=0, zeta=0.0)
    for b, cap in caps.items():
        s = cap.samples
        if correct_cfo and n_avg >= 2:
            f = receiver.estimate_cfo(s, span)
            sync.cfo_est[b] = f
            s = s * np.exp(-2j * np.pi * f * np.arange(s.size))
        r = receiver.demod_ofdm(s, 0, cfg, n_symbols=n_avg)
        h = receiver.estimate_channels(r, symbol.freq)
        if align_phase and n_avg > 1:
            ref = h[0]
            ph = np.angle(h @ np.conj(ref))
            h = h * np.exp(-1j * ph)[:, None]
        hhats[b] = h.mean(axis=0)
    return hhats, sync


def pipeline_cirs(scenario: LinkScenario, n_avg: int = 4, rng=None,
                  correct_cfo: bool = False) -> dict:
    hhats, _ = pipeline_channel_estimates(scenario, n_avg, rng, correct_cfo)
    return {b: ranging.oversampled_cir(h, scenario.ofdm, b) for b, h in hhats.items()}


def analytic_cirs(scenario: LinkScenario, zeta: float = 0.0) -> dict:
    return {b: ranging.analytic_cir(scenario.channels, scenario.ofdm, b,
                                    fe=scenario.fe, zeta=zeta, phi_tx=scenario.phi_tx)
            for b in BANDS}


# ----------------------------------------------------------------------------
# model backend: channel-estimate streams written from the link model
# ----------------------------------------------------------------------------

def band_model_vector(scenario: LinkScenario, band: str) -> np.ndarray:
    """Expected channel estimate in one band (A order), CW tag state +1.

    Center: (1/2) e^{j(phi_tx-phi_rx)} H0. Side bands: the same front factor
    times the first clock harmonic and the compound H1*H2 response. Timing
    and group delay are *not* included here; the stream builder injects them.
    """
    cfg = scenario.ofdm
    h0, h1, h2 = scenario.channels
    dphi = scenario.phi_tx - scenario.fe.phase(band)
    front = 0.5 * np.exp(1j * dphi)
    if band == "center":
        return front * channel.cfr(h0, cfg, "center")
    unit = tag.band_coefficient(band, scenario.tag, state=1.0)
    return front * unit * channel.cfr(h1, cfg, "center") * channel.cfr(h2, cfg, band)


def model_hhat_streams(scenario: LinkScenario, n_symbols: int, noise_var: dict,
                       rng=None, states=None, zeta: float = 0.0, k0_int: int = 0,
                       f_res: float = 0.0, bands=BANDS,
                       illum_freq: np.ndarray | None = None) -> dict:
    """Per-OFDM-symbol channel-estimate streams from the link model.

    noise_var: band -> per-subcarrier complex noise variance on H_hat.
    states: per-symbol tag reflection values (None = CW, all ones); applied
    to the side bands only. zeta/k0_int: common uncorrected timing (grid
    units). f_res: residual CFO normalized to the grid rate; realized as the
    true intercarrier-interference operator plus the symbol-to-symbol
    rotation it implies.
    """
    rng = signalcore.as_rng(rng)
    cfg = scenario.ofdm
    n = cfg.subcarriers
    big_n = cfg.n_subcarriers
    if illum_freq is None:
        illum_freq = waveform.make_symbol(cfg, "zadoff_chu").freq
    if states is None:
        states = np.ones(n_symbols, dtype=complex)
    states = np.asarray(states, dtype=complex)
    if states.size != n_symbols:
        raise ValueError("need one tag state per OFDM symbol")
    ici = receiver.ici_matrix(f_res, big_n) if f_res else None
    out = {}
    for b in bands:
        v = band_model_vector(scenario, b)
        v = v * np.exp(-2j * np.pi * n *
                       (k0_int + zeta + scenario.fe.group_delay(b)) / big_n)
        if ici is not None:
            v = (ici @ (v * illum_freq)) / illum_freq
        x = states if b != "center" else np.ones(n_symbols, dtype=complex)
        rot = (np.exp(2j * np.pi * f_res * big_n * np.arange(n_symbols))
               if f_res else np.ones(n_symbols))
        noise = (signalcore.awgn(n_symbols * big_n, noise_var.get(b, 0.0), rng)
                 .reshape(n_symbols, big_n)) / illum_freq[None, :]
        out[b] = (x * rot)[:, None] * v[None, :] + noise
    return out


def per_bit_snr(scenario: LinkScenario, noise_var: float) -> float:
    """Matched-filter per-bit SNR of the two combined side bands."""
    k_sym = scenario.tag.symbols_per_tag_symbol(scenario.ofdm)
    e = sum(float(np.sum(np.abs(band_model_vector(scenario, b)) ** 2))
            for b in ("lower", "upper"))
    return k_sym * e / noise_var


def noise_for_band_snr(scenario: LinkScenario, snr_linear: float, band: str) -> float:
    """Per-subcarrier noise variance hitting a target mean subcarrier SNR."""
    v = band_model_vector(scenario, band)
    return float(np.mean(np.abs(v) ** 2) / snr_linear)


def los_level(scenario: LinkScenario, band: str) -> float:
    """Per-subcarrier power of the LoS-only part of the band model vector.

    Unlike the full-vector mean this does not grow with the number of
    scatterers, so noise referenced to it keeps the direct-path information
    content comparable across multipath richness.
    """
    h0, h1, h2 = scenario.channels
    if band == "center":
        return float(0.25 * np.abs(h0.gains[0]) ** 2)
    unit = tag.band_coefficient(band, scenario.tag, state=1.0)
    return float(np.abs(0.5 * unit * h1.gains[0] * h2.gains[0]) ** 2)


def noise_for_los_snr(scenario: LinkScenario, snr_linear: float, band: str) -> float:
    """Noise variance that sets the LoS-referenced subcarrier SNR."""
    return los_level(scenario, band) / snr_linear


def noise_for_bit_snr(scenario: LinkScenario, gamma_linear: float) -> float:
    """Single noise variance giving a target matched-filter per-bit SNR."""
    k_sym = scenario.tag.symbols_per_tag_symbol(scenario.ofdm)
    e = sum(float(np.sum(np.abs(band_model_vector(scenario, b)) ** 2))
            for b in ("lower", "upper"))
    return k_sym * e / gamma_linear


def average_stream(h_stream: np.ndarray, align_phase: bool = True) -> np.ndarray:
    """Mean channel estimate over a (K, N) per-symbol stream.

    With align_phase the symbols are first rotated onto the first one, so a
    residual common rotation (uncorrected CFO) does not cancel the average.
    """
    h = np.atleast_2d(np.asarray(h_stream, dtype=complex))
    if align_phase and h.shape[0] > 1:
        ph = np.angle(h @ np.conj(h[0]))
        h = h * np.exp(-1j * ph)[:, None]
    return h.mean(axis=0)


def calibration_cirs(ofdm: OfdmConfig, fe: FrontEndConfig, tag_cfg: TagConfig | None = None,
                     phi_tx: float = 0.0, n_avg: int = 4) -> dict:
    """Zero-propagation reference capture for :func:`ranging.calibrate`.

    All three links collapse to a single zero-delay unit tap, so the only
    peak offsets left are the per-band group delays.
    """
    zero = [channel.make_channel([0.0], [1.0 + 0j], ofdm, link)
            for link in ("tx_rx", "tx_tag", "tag_rx")]
    scen = LinkScenario(ofdm=ofdm, tag=tag_cfg or TagConfig(mode="cw"),
                        fe=fe, channels=tuple(zero), phi_tx=phi_tx)
    return pipeline_cirs(scen, n_avg=n_avg)


def default_scenario(geometry: Geometry | None = None, n_scatterers: int = 0,
                     seed=None, ofdm: OfdmConfig | None = None,
                     tag_cfg: TagConfig | None = None,
                     fe: FrontEndConfig | None = None,
                     phi_tx: float | None = None) -> LinkScenario:
    """Convenience builder with the standard bench parameters."""
    rng = signalcore.as_rng(seed)
    ofdm = ofdm or OfdmConfig()
    tag_cfg = tag_cfg or TagConfig(mode="cw")
    fe = fe or FrontEndConfig()
    if geometry is None:
        geometry = sample_geometry(rng, n_scatterers)
    chans = channel.geometry_to_channels(geometry, ofdm, rng)
    if phi_tx is None:
        phi_tx = float(rng.uniform(0, 2 * np.pi))
    return LinkScenario(ofdm=ofdm, tag=tag_cfg, fe=fe, channels=chans,
                        phi_tx=phi_tx, geometry=geometry)
