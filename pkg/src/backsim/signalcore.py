"""Core discrete-signal primitives shared by the whole simulator.

Everything here is intentionally small: unitary transforms, a sliding
correlator for timing search, the periodic-sinc kernel that shows up in
oversampled impulse responses, and a complex AWGN source.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_rng",
    "dft",
    "idft",
    "sliding_correlate",
    "dirichlet",
    "awgn",
    "to_db",
    "from_db",
]


def as_rng(seed_or_rng=None) -> np.random.Generator:
    """Coerce ``None`` / int seed / Generator into a numpy Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def dft(x: np.ndarray) -> np.ndarray:
    """Unitary forward DFT of any length.

    y[k] = (1/sqrt(N)) * sum_n x[n] exp(-j 2 pi k n / N)

    Works along the last axis. Unitary scaling keeps energy identical in
    both domains (Parseval holds exactly), which the channel-estimate and
    impulse-response math relies on.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("dft: empty input")
    return np.fft.fft(x, axis=-1) / np.sqrt(n)


def idft(x: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT, exact inverse of :func:`dft` for any length."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("idft: empty input")
    return np.fft.ifft(x, axis=-1) * np.sqrt(n)


def sliding_correlate(stream: np.ndarray, template: np.ndarray):
    """Correlate a known template against a longer stream.

    Parameters
    ----------
    stream : complex array, length Ls
    template : complex array, length Lt <= Ls

    Returns
    -------
    (best_index, magnitudes)
        ``magnitudes[k] = |sum_m conj(template[m]) * stream[k+m]|`` for
        lags k = 0 .. Ls-Lt, and ``best_index = argmax(magnitudes)``.
    """
    stream = np.asarray(stream)
    template = np.asarray(template)
    if template.size == 0:
        raise ValueError("sliding_correlate: empty template")
    if template.size > stream.size:
        raise ValueError("sliding_correlate: template longer than stream")
    # full complex correlation; np.correlate in 'valid' mode conjugates its
    # second argument, so pass the template there.
    corr = np.correlate(stream, template, mode="valid")
    mags = np.abs(corr)
    return int(np.argmax(mags)), mags


def dirichlet(n_tones: int, n_grid: int, x) -> np.ndarray:
    """Periodic-sinc (Dirichlet) kernel for a block of ``n_tones`` tones.

    D(x) = sum_{m=0}^{N-1} exp(-j 2 pi m x)
         = exp(-j pi (N-1) x) * sin(pi N x) / sin(pi x)

    ``n_grid`` is the fine evaluation grid size the caller works on and is
    only validated here (n_tones <= n_grid); typical use evaluates at
    x = k / n_grid. The removable singularities at integer x evaluate to
    exactly N. Conjugate symmetry D(-x) = conj(D(x)) holds by construction.
    """
    if n_tones < 1:
        raise ValueError("dirichlet: n_tones must be >= 1")
    if n_grid < n_tones:
        raise ValueError("dirichlet: n_grid must be >= n_tones")
    x = np.asarray(x, dtype=float)
    num = np.sin(np.pi * n_tones * x)
    den = np.sin(np.pi * x)
    near = np.isclose(den, 0.0, atol=1e-12)
    ratio = np.empty_like(x)
    # limit at integer x: N * cos(pi N x)/cos(pi x) -> N*(-1)^{(N-1)x}
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio[~near] = num[~near] / den[~near]
    if np.any(near):
        xr = np.round(x[near]).astype(int)
        ratio[near] = n_tones * (-1.0) ** ((n_tones - 1) * xr)
    out = np.exp(-1j * np.pi * (n_tones - 1) * x) * ratio
    return out if out.shape else complex(out)


def awgn(length: int, variance: float, rng=None) -> np.ndarray:
    """Circularly-symmetric complex Gaussian noise.

    ``variance`` is the total complex variance E|v|^2; each of the I and Q
    components gets variance/2. variance == 0 returns exact zeros so that
    noiseless runs stay bit-deterministic.
    """
    if variance < 0:
        raise ValueError("awgn: negative variance")
    if variance == 0:
        return np.zeros(length, dtype=complex)
    rng = as_rng(rng)
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(length) + 1j * rng.standard_normal(length))


def to_db(x) -> np.ndarray:
    """Power ratio -> dB."""
    return 10.0 * np.log10(x)


def from_db(x) -> np.ndarray:
    """dB -> power ratio."""
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)
