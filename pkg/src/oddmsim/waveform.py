"""Sample-level transmitter and matched-filter receiver for the pulse-train waveform.

The transmit pulse is a train of N copies of a truncated square-root raised
cosine, one per slot period, which keeps the waveform orthogonal with respect
to the delay and Doppler resolutions of the grid.

All waveform processing runs in *sample units*: one sample step is the unit of
time, so a pulse spans ``2*Q*oversampling + 1`` samples and the frame spans
``M*N*oversampling`` samples.  With the pulse train normalized to unit
discrete energy, a matched filter then preserves per-sample noise variance,
which keeps the SNR bookkeeping identical between the sample-level chain and
the grid-level matrix model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import DDFrame, FrameConfig, _as_grid


@dataclass(frozen=True, eq=False)
class PulseBank:
    """Prototype pulse samples plus the implicit pulse-train layout.

    The train u(t) = sum over n_hat of a(t - n_hat*T) is never materialized;
    it is described by `copies` offsets of `block` samples.
    """

    a: np.ndarray        # real prototype pulse, 2*Q*oversampling + 1 taps
    Q: int
    oversampling: int
    copies: int          # N pulses per train
    slot: int            # samples per delay bin (= oversampling)
    block: int           # samples per slot period T (= M * oversampling)

    @property
    def half_len(self) -> int:
        return self.Q * self.oversampling

    @property
    def u_energy(self) -> float:
        return self.copies * float(np.sum(self.a * self.a))


@dataclass(frozen=True, eq=False)
class SampleStream:
    """Complex baseband samples at `rate` Hz, first sample at time `t0` s."""

    samples: np.ndarray
    rate: float
    t0: float = 0.0

    @property
    def start_index(self) -> int:
        return int(round(self.t0 * self.rate))


def _srrc_taps(t: np.ndarray, beta: float) -> np.ndarray:
    """Square-root raised cosine evaluated at t (in symbol periods)."""
    if beta == 0.0:
        return np.sinc(t)
    out = np.empty_like(t)
    # singular points of the closed form
    tiny = 1e-9
    at_zero = np.abs(t) < tiny
    at_break = np.abs(np.abs(t) - 1.0 / (4.0 * beta)) < tiny
    regular = ~(at_zero | at_break)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1 - beta + 4 * beta / np.pi
    out[at_break] = (beta / np.sqrt(2.0)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    return out


def build_srrc(config: FrameConfig) -> PulseBank:
    """Truncated SRRC prototype, renormalized to discrete energy 1/N.

    Truncation support is [-Q, +Q] delay bins; with unit pulse energy per
    train (N copies of energy 1/N) the matched filter has unit gain.
    """
    osf = config.oversampling
    n = np.arange(-config.Q * osf, config.Q * osf + 1)
    a = _srrc_taps(n / osf, config.rolloff)
    a = a / np.sqrt(config.N * np.sum(a * a))
    return PulseBank(a=a, Q=config.Q, oversampling=osf, copies=config.N,
                     slot=osf, block=config.M * osf)


def oddm_modulate(frame, pulses: PulseBank, config: FrameConfig,
                  cyclic_prefix_chips: int = 0) -> SampleStream:
    """Synthesize the staggered multicarrier waveform for one frame.

    Each symbol S(m, n) rides the pulse train delayed by m slots and
    modulated by the n-th Doppler subcarrier.  With
    ``cyclic_prefix_chips > 0`` the tail of the frame is folded in front of
    t = 0 so that a multipath channel with delay spread up to that many
    delay bins acts circularly on the frame, matching the wrap blocks of the
    grid-level channel matrix.
    """
    grid = _as_grid(frame)
    M, N, osf = config.M, config.N, config.oversampling
    if grid.shape != (M, N):
        raise ValueError(f"frame shape {grid.shape} != ({M}, {N})")
    if cyclic_prefix_chips < 0 or cyclic_prefix_chips > M:
        raise ValueError("cyclic_prefix_chips must be in [0, M]")
    qos = pulses.half_len
    L = M * N * osf
    body = np.zeros(L + 2 * qos, dtype=complex)  # covers t in [-qos, L+qos)
    m_idx = np.arange(M)
    t_axis = np.arange(-qos, L + qos)
    a = pulses.a.astype(complex)
    for n in range(N):
        # pull the Doppler carrier's slot-offset phase into the symbol weights
        coeff = grid[:, n] * np.exp(-2j * np.pi * n * m_idx / (M * N))
        up = np.zeros(M * osf, dtype=complex)
        up[::osf] = coeff
        conv = fftconvolve(up, a)  # spans t in [-qos, M*osf + qos)
        spread = np.zeros_like(body)
        for n_hat in range(N):
            start = n_hat * M * osf
            spread[start:start + conv.size] += conv
        body += spread * np.exp(2j * np.pi * n * t_axis / (N * M * osf))
    if cyclic_prefix_chips == 0:
        return SampleStream(samples=body, rate=config.sample_rate,
                            t0=-qos / config.sample_rate)
    cp = cyclic_prefix_chips * osf
    out = np.zeros(cp + L + 2 * qos, dtype=complex)
    out[cp:] = body
    out[:cp + 2 * qos] += body[L - cp:]  # fold frame tail in front of t = 0
    return SampleStream(samples=out, rate=config.sample_rate,
                        t0=-(cp + qos) / config.sample_rate)


def oddm_demodulate(stream: SampleStream, pulses: PulseBank,
                    config: FrameConfig) -> DDFrame:
    """Project a received stream back onto the M x N grid via the matched filter."""
    M, N, osf = config.M, config.N, config.oversampling
    y = stream.samples
    i0 = stream.start_index
    qos = pulses.half_len
    # matched-filter positions m*osf + n_hat*M*osf must all be covered
    last_needed = (M - 1) * osf + (N - 1) * M * osf + qos
    if i0 > -qos or i0 + y.size <= last_needed:
        raise ValueError("stream too short to cover one frame plus pulse tails")
    t_abs = i0 + np.arange(y.size)
    m_idx = np.arange(M)
    # correlation index for delay slot m, pulse copy n_hat
    pos = m_idx[:, None] * osf + np.arange(N)[None, :] * (M * osf)
    gather = pos - i0  # index into the correlation array defined below
    out = np.empty((M, N), dtype=complex)
    a = pulses.a.astype(complex)
    for n in range(N):
        w = y * np.exp(-2j * np.pi * n * t_abs / (N * M * osf))
        corr = fftconvolve(w, a)  # a is even, so convolution == correlation
        # corr[j] is the correlation at shift (j - qos) + i0 in absolute time
        vals = corr[gather + qos].sum(axis=1)
        out[:, n] = vals * np.exp(2j * np.pi * n * m_idx / (M * N))
    return DDFrame(out)


def pulse_orthogonality_matrix(pulses: PulseBank, config: FrameConfig,
                               m_range, n_range) -> np.ndarray:
    """|<u, u shifted by m bins and n Doppler bins>| for the requested ranges.

    Entry (0, 0) is the train energy (1 for a normalized bank); off-peak
    entries bound the self-interference left by pulse truncation.
    """
    M, N, osf = config.M, config.N, config.oversampling
    m_range = np.asarray(list(m_range), dtype=int)
    n_range = np.asarray(list(n_range), dtype=int)
    if np.any(np.abs(m_range) >= M) or np.any(np.abs(n_range) > N):
        raise ValueError("shift ranges exceed the grid")
    qos = pulses.half_len
    L = M * N * osf
    u = np.zeros(L + 2 * qos)
    for n_hat in range(N):
        start = n_hat * M * osf
        u[start:start + pulses.a.size] += pulses.a
    t = np.arange(-qos, L + qos)
    out = np.empty((m_range.size, n_range.size))
    for i, m in enumerate(m_range):
        shift = m * osf
        u_shift = np.zeros_like(u)
        if shift >= 0:
            u_shift[shift:] = u[:u.size - shift]
        else:
            u_shift[:shift] = u[-shift:]
        w = u * u_shift
        phase = np.exp(-2j * np.pi * np.outer(n_range, t - shift) / (N * M * osf))
        out[i, :] = np.abs(phase @ w)
    return out
