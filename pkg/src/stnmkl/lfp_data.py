"""LFP recordings, event markers, bipolar re-referencing and windowing.

Also holds the synthetic recording generator and the on-disk container.

Container layout (all little-endian)::

    offset  size  field
    0       8     magic  b"STNLFP\\x00\\x00"
    8       2     version (u16, currently 1)
    10      2     channel count (u16)
    12      8     sample count (u64)
    20      8     sample rate (f64, Hz)
    28      4*C*S channel matrix, float32, row-major (channel, sample)

The sidecar ``<stem>.json`` holds ``version``, ``hemisphere_map`` (one
``{"hemisphere", "contact"}`` object per channel row) and ``events``
(``[{"onset_sample", "label"}]``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import signal as sps

from .errors import (
    InsufficientQuietSignal,
    InvalidSpec,
    MissingContact,
    ParseError,
    SchemaMismatch,
    WindowOutOfBounds,
)

LEFT = "Left"
RIGHT = "Right"
HEMISPHERES = (LEFT, RIGHT)

BUTTON_PRESS = "ButtonPress"
MOUTH_MOVEMENT = "MouthMovement"
SPEECH = "Speech"
ARM_MOVEMENT = "ArmMovement"
RANDOM_SEGMENT = "RandomSegment"
TASK_LABELS = (BUTTON_PRESS, MOUTH_MOVEMENT, SPEECH, ARM_MOVEMENT, RANDOM_SEGMENT)

MAGIC = b"STNLFP\x00\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHQd")


@dataclass(frozen=True)
class EventMarker:
    onset: int
    label: str

    def __post_init__(self):
        if self.label not in TASK_LABELS:
            raise InvalidSpec(f"unknown task label {self.label!r}")
        object.__setattr__(self, "onset", int(self.onset))


@dataclass(frozen=True)
class ContactRef:
    hemisphere: str
    contact: int

    def __post_init__(self):
        if self.hemisphere not in HEMISPHERES:
            raise InvalidSpec(f"unknown hemisphere {self.hemisphere!r}")
        object.__setattr__(self, "contact", int(self.contact))


def _half_window(sample_rate: float) -> int:
    return int(round(sample_rate))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LfpRecording:
    """Raw multi-contact recording.

    ``channels`` is (n_contacts, n_samples) float32 in microvolts; row ``i``
    belongs to ``hemisphere_map[i]``.
    """

    channels: np.ndarray
    sample_rate: float
    hemisphere_map: tuple
    events: tuple = ()

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.ndim != 2:
            raise InvalidSpec("channels must be a 2-D (contact, sample) matrix")
        if not self.sample_rate > 0:
            raise InvalidSpec("sample_rate must be positive")
        hmap = tuple(
            c if isinstance(c, ContactRef) else ContactRef(*c) for c in self.hemisphere_map
        )
        if len(hmap) != ch.shape[0]:
            raise InvalidSpec("hemisphere_map must have one entry per channel row")
        if len(set(hmap)) != len(hmap):
            raise InvalidSpec("contact index repeated within a hemisphere")
        half = _half_window(self.sample_rate)
        if ch.shape[1] < 2 * half:
            raise InvalidSpec("recording shorter than one +/-1 s window")
        events = tuple(
            e if isinstance(e, EventMarker) else EventMarker(*e) for e in self.events
        )
        for e in events:
            _check_window(e, half, ch.shape[1])
        object.__setattr__(self, "channels", _readonly(ch))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "hemisphere_map", hmap)
        object.__setattr__(self, "events", events)

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LfpRecording):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.hemisphere_map == other.hemisphere_map
            and self.events == other.events
            and self.channels.shape == other.channels.shape
            and np.array_equal(self.channels, other.channels)
        )

    __hash__ = None

    def contact_rows(self, hemisphere: str) -> dict[int, int]:
        """Map contact index -> channel row for one hemisphere."""
        return {c.contact: i for i, c in enumerate(self.hemisphere_map) if c.hemisphere == hemisphere}


@dataclass(frozen=True, eq=False)
class BipolarSignal:
    pairs: np.ndarray
    sample_rate: float
    hemisphere: str
    names: tuple = ()

    @property
    def n_samples(self) -> int:
        return self.pairs.shape[1]


@dataclass(frozen=True, eq=False)
class EventWindow:
    segment: np.ndarray
    label: str
    hemisphere: str
    onset: int
    sample_rate: float
    names: tuple = ()


def _check_window(event: EventMarker, half: int, n_samples: int) -> None:
    if event.onset < half or event.onset + half >= n_samples:
        raise WindowOutOfBounds(
            f"event {event.label}@{event.onset}: window [{event.onset - half}, "
            f"{event.onset + half}) exceeds recording of {n_samples} samples",
            event=event,
        )


def bipolar_rereference(rec: LfpRecording, hemisphere: str) -> BipolarSignal:
    """Adjacent-contact differences ``contact_k - contact_{k+1}``.

    Contacts must form a consecutive run of indices; fewer than four contacts
    give fewer pairs.
    """
    rows = rec.contact_rows(hemisphere)
    if len(rows) < 2:
        raise MissingContact(f"{hemisphere} hemisphere needs at least 2 contacts, has {len(rows)}")
    idx = sorted(rows)
    for k in range(idx[0], idx[-1] + 1):
        if k not in rows:
            raise MissingContact(f"{hemisphere} contact {k} missing")
    top = rec.channels[[rows[k] for k in idx[:-1]]].astype(np.float64)
    bottom = rec.channels[[rows[k] for k in idx[1:]]].astype(np.float64)
    pairs = top - bottom
    pairs.setflags(write=False)
    names = tuple(f"{a}-{a + 1}" for a in idx[:-1])
    return BipolarSignal(pairs, rec.sample_rate, hemisphere, names)


def extract_windows(sig: BipolarSignal, events: Sequence[EventMarker]) -> list[EventWindow]:
    """One sample-exact window ``[onset - rate, onset + rate)`` per event."""
    half = _half_window(sig.sample_rate)
    out = []
    for e in events:
        _check_window(e, half, sig.n_samples)
        seg = sig.pairs[:, e.onset - half : e.onset + half].copy()
        seg.setflags(write=False)
        out.append(EventWindow(seg, e.label, sig.hemisphere, e.onset, sig.sample_rate, sig.names))
    return out


def random_segment_markers(
    n_samples: int,
    sample_rate: float,
    events: Sequence[EventMarker],
    count: int,
    guard: float = 2.0,
    rng_seed=None,
) -> list[EventMarker]:
    """Draw ``count`` distinct window centres at least ``guard`` s from every onset."""
    if count < 0:
        raise InvalidSpec("count must be non-negative")
    if count == 0:
        return []
    half = _half_window(sample_rate)
    g = int(np.ceil(guard * sample_rate))
    admissible = np.zeros(n_samples, dtype=bool)
    admissible[half : n_samples - half] = True
    for e in events:
        admissible[max(e.onset - g + 1, 0) : e.onset + g] = False
    candidates = np.flatnonzero(admissible)
    if candidates.size < count:
        raise InsufficientQuietSignal(
            f"only {candidates.size} admissible centres for {count} random segments"
        )
    rng = np.random.default_rng(rng_seed)
    centres = np.sort(rng.choice(candidates, size=count, replace=False))
    return [EventMarker(int(c), RANDOM_SEGMENT) for c in centres]


def sample_random_segments(
    sig: BipolarSignal,
    events: Sequence[EventMarker],
    count: int,
    guard: float = 2.0,
    rng_seed=None,
) -> list[EventWindow]:
    markers = random_segment_markers(sig.n_samples, sig.sample_rate, events, count, guard, rng_seed)
    return extract_windows(sig, markers)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class ClassProfile:
    """Beta suppression around an onset, per hemisphere.

    ``depth_*`` is the fractional drop of beta amplitude at the bottom of the
    dip, ``lag`` (s) shifts the dip centre relative to the onset and ``width``
    (s) is the Gaussian dip standard deviation.
    """

    depth_left: float
    depth_right: float
    lag: float = 0.0
    width: float = 0.3


DEFAULT_PROFILES = {
    BUTTON_PRESS: ClassProfile(0.8, 0.2, 0.0),
    SPEECH: ClassProfile(0.2, 0.8, 0.0),
    ARM_MOVEMENT: ClassProfile(0.8, 0.8, 0.35),
    MOUTH_MOVEMENT: ClassProfile(0.5, 0.5, -0.35),
}


@dataclass(frozen=True)
class SyntheticSpec:
    events_per_class: Mapping[str, int] = field(
        default_factory=lambda: {BUTTON_PRESS: 40, SPEECH: 40}
    )
    profiles: Mapping[str, ClassProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    sample_rate: float = 5000.0
    beta_freqs: tuple = (15.0, 18.0, 20.0, 23.0, 26.0, 30.0)
    beta_amplitude: float = 10.0
    noise_level: float = 5.0
    common_mode: float = 20.0
    depth_jitter: float = 0.1
    amplitude_drift: float = 0.2
    contact_gains: tuple = (1.0, 0.7, 0.4, 0.1)
    event_spacing: float = 6.0
    spacing_jitter: float = 0.5
    margin: float = 4.0
    bandpass: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not self.sample_rate > 0:
            raise InvalidSpec("sample_rate must be positive")
        if not self.events_per_class:
            raise InvalidSpec("events_per_class is empty")
        for label, n in self.events_per_class.items():
            if label not in self.profiles or label == RANDOM_SEGMENT:
                raise InvalidSpec(f"no modulation profile for {label!r}")
            if int(n) <= 0:
                raise InvalidSpec(f"event count for {label} must be positive")
        if self.event_spacing <= 2 * self.spacing_jitter + 2.0:
            raise InvalidSpec("event_spacing too small for non-overlapping windows")
        if self.margin < 1.0 + self.spacing_jitter:
            raise InvalidSpec("margin must leave room for the first window")
        if self.beta_amplitude < 0 or self.noise_level < 0 or self.common_mode < 0:
            raise InvalidSpec("amplitudes must be non-negative")
        if len(self.contact_gains) < 2:
            raise InvalidSpec("need at least two contacts")


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def modulation_envelope(
    n_samples: int,
    sample_rate: float,
    events: Sequence[EventMarker],
    depths: Sequence[float],
    profiles: Mapping[str, ClassProfile],
) -> np.ndarray:
    """Multiplicative beta gain (1 minus the event dips), clipped at zero."""
    t = np.arange(n_samples) / sample_rate
    env = np.ones(n_samples)
    for e, depth in zip(events, depths):
        prof = profiles[e.label]
        centre = e.onset / sample_rate + prof.lag
        lo = max(int((centre - 6 * prof.width) * sample_rate), 0)
        hi = min(int((centre + 6 * prof.width) * sample_rate) + 1, n_samples)
        env[lo:hi] -= depth * np.exp(-0.5 * ((t[lo:hi] - centre) / prof.width) ** 2)
    return np.clip(env, 0.0, None)


def _event_schedule(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[list[EventMarker], int]:
    labels = [lab for lab in sorted(spec.events_per_class) for _ in range(int(spec.events_per_class[lab]))]
    labels = [labels[i] for i in rng.permutation(len(labels))]
    fs = spec.sample_rate
    onsets_s = spec.margin + spec.event_spacing * np.arange(len(labels))
    onsets_s += rng.uniform(-spec.spacing_jitter, spec.spacing_jitter, len(labels))
    n = int(round((2 * spec.margin + spec.event_spacing * (len(labels) - 1)) * fs))
    events = [EventMarker(int(round(o * fs)), lab) for o, lab in zip(onsets_s, labels)]
    return events, n


def generate_synthetic_recording(spec: SyntheticSpec) -> LfpRecording:
    """Two 4-contact leads with pink background and event-locked beta dips.

    Each hemisphere carries a beta oscillation (sum of ``beta_freqs``) whose
    amplitude follows :func:`modulation_envelope` with per-event depths
    ``profile.depth_<hemi> * (1 + depth_jitter * N(0, 1))``, scaled by a slow
    random drift. Contacts see the oscillation through ``contact_gains`` plus
    a common-mode signal (removed by bipolar referencing) and independent
    pink noise. Deterministic in ``spec`` including ``seed``.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    events, n = _event_schedule(spec, rng)
    fs = spec.sample_rate
    t = np.arange(n) / fs
    gains = np.asarray(spec.contact_gains, dtype=np.float64)
    n_contacts = gains.size
    channels = np.empty((2 * n_contacts, n), dtype=np.float32)
    hmap = []
    for h, hemi in enumerate(HEMISPHERES):
        base = spec.profiles
        nominal = [base[e.label].depth_left if hemi == LEFT else base[e.label].depth_right for e in events]
        depths = np.clip(
            np.asarray(nominal) * (1.0 + spec.depth_jitter * rng.standard_normal(len(events))), 0.0, 1.0
        )
        env = modulation_envelope(n, fs, events, depths, base)
        if spec.amplitude_drift > 0:
            drift = _slow_drift(n, fs, rng)
            env = env * np.clip(1.0 + spec.amplitude_drift * drift, 0.0, None)
        carrier = np.zeros(n)
        for f in spec.beta_freqs:
            carrier += np.cos(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        beta = spec.beta_amplitude * env * carrier
        common = spec.common_mode * pink_noise(n, rng) if spec.common_mode > 0 else 0.0
        for k in range(n_contacts):
            x = gains[k] * beta + common
            if spec.noise_level > 0:
                x = x + spec.noise_level * pink_noise(n, rng)
            if spec.bandpass:
                x = bandpass(x, fs)
            channels[h * n_contacts + k] = x
            hmap.append(ContactRef(hemi, k))
    return LfpRecording(channels, fs, tuple(hmap), tuple(events))


def _slow_drift(n: int, fs: float, rng: np.random.Generator, corner: float = 0.2) -> np.ndarray:
    """Unit-variance Gaussian noise low-passed below ``corner`` Hz."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    spec[f > corner] = 0.0
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def bandpass(x: np.ndarray, fs: float, low: float = 1.0, high: float = 100.0, order: int = 4) -> np.ndarray:
    """Zero-phase acquisition band-pass; the upper edge is dropped above Nyquist."""
    if high < fs / 2:
        sos = sps.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    else:
        sos = sps.butter(order, low, btype="highpass", fs=fs, output="sos")
    return sps.sosfiltfilt(sos, x)


# ---------------------------------------------------------------------------
# container I/O


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_recording(rec: LfpRecording, path) -> None:
    path = Path(path)
    n_ch, n_s = rec.channels.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n_ch, n_s, rec.sample_rate))
        fh.write(np.ascontiguousarray(rec.channels, dtype="<f4").tobytes())
    meta = {
        "version": FORMAT_VERSION,
        "hemisphere_map": [{"hemisphere": c.hemisphere, "contact": c.contact} for c in rec.hemisphere_map],
        "events": [{"onset_sample": e.onset, "label": e.label} for e in rec.events],
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1))


def load_recording(path) -> LfpRecording:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated header", offset=len(raw))
    magic, version, n_ch, n_s, rate = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError("bad magic", offset=0)
    if version != FORMAT_VERSION:
        raise SchemaMismatch(f"container version {version}, expected {FORMAT_VERSION}")
    expected = _HEADER.size + 4 * n_ch * n_s
    if len(raw) != expected:
        raise ParseError(f"expected {expected} bytes, found {len(raw)}", offset=min(len(raw), expected))
    channels = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n_ch, n_s)

    side = _sidecar(path)
    try:
        text = side.read_text()
    except FileNotFoundError as exc:
        raise ParseError(f"missing sidecar {side}") from exc
    try:
        meta = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"sidecar JSON: {exc.msg}", offset=exc.pos) from exc
    if meta.get("version") != FORMAT_VERSION:
        raise SchemaMismatch(f"sidecar version {meta.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        hmap = tuple(ContactRef(c["hemisphere"], c["contact"]) for c in meta["hemisphere_map"])
        events = tuple(EventMarker(e["onset_sample"], e["label"]) for e in meta["events"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"sidecar missing field {exc}") from exc
    return LfpRecording(channels, rate, hmap, events)
