"""Complex Morlet CWT and beta-band magnitude spectrograms.

The transform at centre frequency ``f_c`` and shift ``b`` is

    X(f_c, b) = sum_n x[n] conj(psi((n - b) / fs)) / fs
    psi(t)    = (pi f_b)^(-1/2) exp(-t^2 / f_b) exp(2j pi f_c t)

i.e. a Riemann sum of the continuous transform with unit scale and the
centre frequency swept inside the wavelet. The signal is zero outside the
window. The wavelet is truncated where its envelope falls below 1e-6 of the
peak (and never extends past the signal length, where it would only meet
zeros).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import InvalidParams
from .lfp_data import EventWindow

BETA_BAND = (13.0, 35.0)
ENVELOPE_FLOOR = 1e-6
DEFAULT_FREQS = tuple(float(f) for f in range(13, 36))


@dataclass(frozen=True)
class MorletParams:
    bandwidth: float = 1.0
    freqs: tuple = DEFAULT_FREQS
    allow_out_of_band: bool = False

    def __post_init__(self):
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        self.validate()

    def validate(self) -> None:
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise InvalidParams(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.freqs:
            raise InvalidParams("empty frequency grid")
        f = np.asarray(self.freqs)
        if np.any(np.diff(f) <= 0):
            raise InvalidParams("frequency grid must be strictly increasing")
        if not self.allow_out_of_band and (f[0] < BETA_BAND[0] or f[-1] > BETA_BAND[1]):
            raise InvalidParams(f"frequency grid outside {BETA_BAND} Hz")
        if f[0] <= 0:
            raise InvalidParams("frequencies must be positive")


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Magnitude matrix, rows = (channel, frequency) blocks, cols = time."""

    values: np.ndarray
    time_rate: float
    freqs: tuple
    channels: tuple = ("0",)

    @property
    def shape(self):
        return self.values.shape


def cmorlet(t, center: float, bandwidth: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return (np.pi * bandwidth) ** -0.5 * np.exp(-(t**2) / bandwidth) * np.exp(2j * np.pi * center * t)


def support_half_width(sample_rate: float, bandwidth: float) -> int:
    """Largest lag (samples) with envelope >= ENVELOPE_FLOOR of its peak."""
    return int(np.floor(np.sqrt(bandwidth * np.log(1.0 / ENVELOPE_FLOOR)) * sample_rate))


@lru_cache(maxsize=32)
def _kernel_bank(n: int, sample_rate: float, bandwidth: float, freqs: tuple):
    half = min(support_half_width(sample_rate, bandwidth), n - 1)
    nfft = sfft.next_fast_len(n + 2 * half, real=False)
    lags = np.arange(-half, half + 1) / sample_rate
    bank = np.stack([cmorlet(lags, f, bandwidth) for f in freqs]) / sample_rate
    spectra = sfft.fft(bank, nfft, axis=-1)
    spectra.setflags(write=False)
    return half, nfft, spectra


def cwt_complex(x, sample_rate: float, params: MorletParams) -> np.ndarray:
    """Complex coefficients, shape (len(freqs), len(x))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidParams("signal must be a non-empty 1-D sequence")
    if not sample_rate > 0:
        raise InvalidParams("sample_rate must be positive")
    params.validate()
    n = x.size
    half, nfft, spectra = _kernel_bank(n, float(sample_rate), float(params.bandwidth), params.freqs)
    full = sfft.ifft(spectra * sfft.fft(x, nfft), axis=-1)
    return full[:, half : half + n]


def cwt_cmorlet(x, sample_rate: float, params: MorletParams | None = None, channel: str = "0") -> Spectrogram:
    params = params or MorletParams()
    mag = np.abs(cwt_complex(x, sample_rate, params))
    return Spectrogram(mag, float(sample_rate), params.freqs, (channel,))


def hemisphere_spectrogram(win: EventWindow, params: MorletParams | None = None) -> Spectrogram:
    """Per-pair spectrograms stacked row-wise in pair order (0-1, 1-2, 2-3)."""
    params = params or MorletParams()
    blocks = [np.abs(cwt_complex(row, win.sample_rate, params)) for row in win.segment]
    names = win.names or tuple(str(i) for i in range(len(blocks)))
    return Spectrogram(np.vstack(blocks), float(win.sample_rate), params.freqs, tuple(names))


# ---------------------------------------------------------------------------
# debug dump: magic, u32 header length, JSON header, float32 matrix

_DUMP_MAGIC = b"STNSPEC1"


def save_spectrogram(spec: Spectrogram, path) -> None:
    header = json.dumps(
        {
            "shape": list(spec.values.shape),
            "time_rate": spec.time_rate,
            "freqs": list(spec.freqs),
            "channels": list(spec.channels),
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_spectrogram(path) -> Spectrogram:
    raw = Path(path).read_bytes()
    if raw[:8] != _DUMP_MAGIC:
        raise ValueError("not a spectrogram dump")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen])
    values = np.frombuffer(raw, dtype="<f4", offset=12 + hlen).reshape(header["shape"])
    return Spectrogram(values.astype(np.float64), header["time_rate"], tuple(header["freqs"]), tuple(header["channels"]))
