"""Frame configuration, delay-Doppler grid indexing, and constellation mapping.

Conventions shared by every other module:

* A frame is an M x N complex grid ``S(m, n)`` with ``m`` the delay index
  (0..M-1) and ``n`` the Doppler index (0..N-1).
* Vectorization is delay-major: ``s[m*N + n] = S(m, n)``, so the effective
  channel matrix decomposes into an M x M grid of N x N Doppler blocks.
* Doppler indices are physically signed, in ``[-floor(N/2), ceil(N/2)-1]``,
  and reduced mod N wherever they index the grid.
* Rounding onto the integer grid is round-half-away-from-zero, so positive
  and negative Doppler quantize symmetrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

C_LIGHT = 299_792_458.0


def round_half_away(x: float) -> int:
    """Round to the nearest integer with ties going away from zero."""
    if x >= 0.0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


@dataclass(frozen=True, eq=False)
class Constellation:
    """Symbol alphabet with unit average energy and Gray bit labels."""

    name: str
    points: np.ndarray      # complex points, mean |point|^2 == 1
    bit_labels: np.ndarray  # (n_points, bits_per_symbol) array of {0, 1}

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]

    @property
    def avg_energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def label_values(self) -> np.ndarray:
        """Integer value of each point's bit label (MSB first)."""
        k = self.bits_per_symbol
        weights = 1 << np.arange(k - 1, -1, -1)
        return self.bit_labels @ weights


def _make_qam4() -> Constellation:
    # Gray map pinned for reproducibility:
    #   00 -> (+1+j)/sqrt(2)   01 -> (-1+j)/sqrt(2)
    #   11 -> (-1-j)/sqrt(2)   10 -> (+1-j)/sqrt(2)
    points = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j], dtype=complex) / np.sqrt(2.0)
    labels = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
    return Constellation("4qam", points, labels)


_CONSTELLATIONS = {"4qam": _make_qam4()}
_CONSTELLATIONS["qpsk"] = _CONSTELLATIONS["4qam"]


def get_constellation(name: str) -> Constellation:
    try:
        return _CONSTELLATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; known: {sorted(_CONSTELLATIONS)}")


@dataclass(frozen=True)
class FrameConfig:
    """All grid and waveform parameters for one delay-Doppler frame.

    M           delay bins / time slots per frame
    N           Doppler bins / subcarriers
    delta_f     subcarrier spacing in Hz; the slot duration is T = 1/delta_f
    f_c         carrier frequency in Hz
    Q           prototype-pulse half length in delay-resolution units
    rolloff     SRRC roll-off factor in [0, 1]
    oversampling  samples per delay bin (sample rate = oversampling*M*delta_f)
    constellation  symbol alphabet identifier
    """

    M: int
    N: int
    delta_f: float
    f_c: float
    Q: int
    rolloff: float = 0.25
    oversampling: int = 8
    constellation: str = "4qam"

    def __post_init__(self):
        if self.M < 2 or self.N < 2:
            raise ValueError(f"need M >= 2 and N >= 2, got M={self.M}, N={self.N}")
        if self.Q < 1:
            raise ValueError(f"need Q >= 1, got Q={self.Q}")
        if 2 * self.Q >= self.M:
            raise ValueError(f"pulse too long for grid: need 2Q < M, got Q={self.Q}, M={self.M}")
        if self.delta_f <= 0 or self.f_c <= 0:
            raise ValueError("delta_f and f_c must be positive")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError(f"rolloff must be in [0, 1], got {self.rolloff}")
        if self.oversampling < 1:
            raise ValueError(f"oversampling must be >= 1, got {self.oversampling}")
        get_constellation(self.constellation)  # rejects unknown ids

    @property
    def T(self) -> float:
        """Slot duration in seconds."""
        return 1.0 / self.delta_f

    @property
    def delay_resolution(self) -> float:
        return self.T / self.M

    @property
    def doppler_resolution(self) -> float:
        return 1.0 / (self.N * self.T)

    @property
    def frame_duration(self) -> float:
        return self.N * self.T

    @property
    def mn(self) -> int:
        return self.M * self.N

    @property
    def sample_rate(self) -> float:
        return self.oversampling * self.M * self.delta_f

    @property
    def constellation_obj(self) -> Constellation:
        return get_constellation(self.constellation)

    def with_(self, **kwargs) -> "FrameConfig":
        return replace(self, **kwargs)


def make_frame_config(M, N, delta_f, f_c, Q, rolloff=0.25, oversampling=8,
                      constellation="4qam") -> FrameConfig:
    """Validate raw parameters and build a FrameConfig."""
    return FrameConfig(M=int(M), N=int(N), delta_f=float(delta_f), f_c=float(f_c),
                       Q=int(Q), rolloff=float(rolloff), oversampling=int(oversampling),
                       constellation=constellation)


@dataclass(frozen=True, eq=False)
class DDFrame:
    """An M x N delay-Doppler symbol grid; entry (m, n) = S(m, n)."""

    symbols: np.ndarray

    def __post_init__(self):
        if self.symbols.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {self.symbols.shape}")

    @property
    def M(self) -> int:
        return self.symbols.shape[0]

    @property
    def N(self) -> int:
        return self.symbols.shape[1]


def _as_grid(frame) -> np.ndarray:
    return frame.symbols if isinstance(frame, DDFrame) else np.asarray(frame)


def vectorize(frame) -> np.ndarray:
    """Flatten a delay-Doppler grid delay-major: s[m*N + n] = S(m, n)."""
    grid = _as_grid(frame)
    return np.ascontiguousarray(grid).reshape(-1)


def devectorize(vec: np.ndarray, config: FrameConfig) -> DDFrame:
    """Inverse of :func:`vectorize` for a given grid shape."""
    vec = np.asarray(vec)
    if vec.size != config.mn:
        raise ValueError(f"vector length {vec.size} != M*N = {config.mn}")
    return DDFrame(vec.reshape(config.M, config.N).copy())


def qam_map(bits, constellation="4qam") -> np.ndarray:
    """Map a bit sequence onto unit-energy constellation symbols."""
    const = constellation if isinstance(constellation, Constellation) else get_constellation(constellation)
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    k = const.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} not divisible by {k}")
    if bits.size == 0:
        return np.zeros(0, dtype=complex)
    vals = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    # point order sorted by label value so lookup is a plain index
    order = np.argsort(const.label_values())
    return const.points[order][vals]


def qam_demap(symbols, constellation="4qam") -> np.ndarray:
    """Hard nearest-point decision back to bits."""
    const = constellation if isinstance(constellation, Constellation) else get_constellation(constellation)
    symbols = np.asarray(symbols, dtype=complex).reshape(-1)
    if symbols.size == 0:
        return np.zeros(0, dtype=np.uint8)
    d2 = np.abs(symbols[:, None] - const.points[None, :]) ** 2
    idx = d2.argmin(axis=1)
    return const.bit_labels[idx].reshape(-1)


def hard_decision(symbols, constellation="4qam") -> np.ndarray:
    """Snap each value to the nearest constellation point."""
    const = constellation if isinstance(constellation, Constellation) else get_constellation(constellation)
    symbols = np.asarray(symbols, dtype=complex).reshape(-1)
    d2 = np.abs(symbols[:, None] - const.points[None, :]) ** 2
    return const.points[d2.argmin(axis=1)]


def delay_index(tau: float, config: FrameConfig) -> int:
    """Integer delay bin l = round(tau * M * delta_f)."""
    if tau < 0:
        raise ValueError(f"delay must be nonnegative, got {tau}")
    l = round_half_away(tau * config.M * config.delta_f)
    if l >= config.M:
        raise ValueError(f"delay {tau} s maps to bin {l} >= M = {config.M}")
    return l


def doppler_index(nu: float, config: FrameConfig) -> int:
    """Signed integer Doppler bin k = round(nu * N * T)."""
    k = round_half_away(nu * config.N * config.T)
    k_lo, k_hi = -(config.N // 2), (config.N + 1) // 2 - 1
    if not k_lo <= k <= k_hi:
        raise ValueError(f"Doppler {nu} Hz maps to bin {k} outside [{k_lo}, {k_hi}]")
    return k


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def random_frame(config: FrameConfig, rng: np.random.Generator):
    """Draw one frame of random constellation symbols; returns (bits, DDFrame)."""
    const = config.constellation_obj
    bits = random_bits(config.mn * const.bits_per_symbol, rng)
    symbols = qam_map(bits, const)
    return bits, devectorize(symbols, config)
