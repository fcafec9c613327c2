"""EDF/EDF+ reading and writing, trial extraction and dataset conformance checks.

Only 16-bit EDF is handled. EDF+ annotation signals (label ``EDF Annotations``)
are decoded into :class:`Annotation` values and kept out of the channel data.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"
CLASS_OF_LABEL = {"T1": "Left", "T2": "Right"}
KNOWN_LABELS = {"T0", "T1", "T2"}

# Runs of the motor movement/imagery dataset holding the left/right fist tasks.
REAL_FIST_RUNS = (3, 7, 11)
IMAGINED_FIST_RUNS = (4, 8, 12)


class EdfError(ValueError):
    """Malformed or unsupported EDF content."""


class TruncatedEdfError(EdfError):
    pass


class EdfHeaderError(EdfError):
    pass


@dataclass(frozen=True)
class Annotation:
    onset: float
    duration: float
    label: str


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    physical_dimension: str = "uV"
    physical_min: float = -3276.8
    physical_max: float = 3276.7
    digital_min: int = -32768
    digital_max: int = 32767
    prefilter: str = ""
    samples_per_record: int = 160

    @property
    def step(self) -> float:
        """Physical size of one digital quantization step."""
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)


@dataclass
class EdfHeader:
    patient: str = "X X X X"
    recording: str = "Startdate X X X X"
    startdate: str = "01.01.00"
    starttime: str = "00.00.00"
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    signals: list[SignalHeader] = field(default_factory=list)


@dataclass
class Recording:
    subject_id: int
    run_id: int
    sampling_rate: float
    channel_labels: list[str]
    samples: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)
    header: EdfHeader | None = None

    @property
    def n_channels(self) -> int:
        return len(self.channel_labels)

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1]) if self.samples.ndim == 2 else 0

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate


@dataclass
class Trial:
    recording: Recording = field(repr=False)
    onset_sample: int
    length_samples: int
    class_label: str
    index: int = 0
    truncated: bool = False


# --------------------------------------------------------------------------
# parsing


def _field(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise EdfHeaderError(f"non-ASCII bytes in header field {what}") from exc


def _num(raw: bytes, what: str, kind=float):
    text = _field(raw, what)
    try:
        value = float(text)
    except ValueError as exc:
        raise EdfHeaderError(f"header field {what} is not numeric: {text!r}") from exc
    if kind is int:
        if not value.is_integer():
            raise EdfHeaderError(f"header field {what} must be an integer: {text!r}")
        return int(value)
    return value


def _parse_tals(raw: bytes) -> list[Annotation]:
    out = []
    for tal in raw.split(b"\x00"):
        if not tal.strip(b"\x00"):
            continue
        parts = tal.split(b"\x14")
        stamp = parts[0].decode("latin-1")
        onset_txt, _, dur_txt = stamp.partition("\x15")
        try:
            onset = float(onset_txt)
            duration = float(dur_txt) if dur_txt else 0.0
        except ValueError as exc:
            raise EdfError(f"malformed annotation timestamp {stamp!r}") from exc
        for text in parts[1:]:
            label = text.decode("utf-8", errors="replace").strip()
            if label:
                out.append(Annotation(onset, duration, label))
    return out


def parse_edf(data: bytes, subject_id: int = 0, run_id: int = 0) -> Recording:
    """Decode an EDF/EDF+ byte string into a :class:`Recording` in physical units.

    Raises :class:`EdfError` (or a subclass) for truncated input, inconsistent
    header arithmetic, non-numeric header fields and unsupported sample widths.
    """
    data = bytes(data)
    if len(data) < 256:
        raise TruncatedEdfError(f"file is {len(data)} bytes, shorter than the 256-byte header")
    if data[0] == 0xFF:
        raise EdfError("unsupported sample width: 24-bit BDF files are not supported")
    version = _field(data[0:8], "version")
    if version != "0":
        raise EdfHeaderError(f"EDF version field must be '0', got {version!r}")
    hdr = EdfHeader(
        patient=_field(data[8:88], "patient"),
        recording=_field(data[88:168], "recording"),
        startdate=_field(data[168:176], "startdate"),
        starttime=_field(data[176:184], "starttime"),
        reserved=_field(data[192:236], "reserved"),
    )
    header_bytes = _num(data[184:192], "header bytes", int)
    n_records = _num(data[236:244], "number of records", int)
    hdr.record_duration = _num(data[244:252], "record duration", float)
    ns = _num(data[252:256], "number of signals", int)
    if ns < 0:
        raise EdfHeaderError(f"negative signal count {ns}")
    if header_bytes != 256 * (ns + 1):
        raise EdfHeaderError(f"header size {header_bytes} inconsistent with {ns} signals")
    if len(data) < header_bytes:
        raise TruncatedEdfError("file ends inside the signal headers")

    pos = 256

    def column(width, what):
        nonlocal pos
        vals = [data[pos + i * width : pos + (i + 1) * width] for i in range(ns)]
        pos += width * ns
        return vals

    labels = [_field(v, "label") for v in column(16, "label")]
    transducers = [_field(v, "transducer") for v in column(80, "transducer")]
    dims = [_field(v, "physical dimension") for v in column(8, "physical dimension")]
    pmin = [_num(v, "physical minimum") for v in column(8, "physical minimum")]
    pmax = [_num(v, "physical maximum") for v in column(8, "physical maximum")]
    dmin = [_num(v, "digital minimum", int) for v in column(8, "digital minimum")]
    dmax = [_num(v, "digital maximum", int) for v in column(8, "digital maximum")]
    prefilters = [_field(v, "prefilter") for v in column(80, "prefilter")]
    spr = [_num(v, "samples per record", int) for v in column(8, "samples per record")]
    for i in range(ns):
        if spr[i] < 0:
            raise EdfHeaderError(f"signal {i} declares {spr[i]} samples per record")
        if dmax[i] <= dmin[i]:
            raise EdfHeaderError(f"signal {i} digital range [{dmin[i]}, {dmax[i]}] is empty")
        hdr.signals.append(
            SignalHeader(labels[i], transducers[i], dims[i], pmin[i], pmax[i], dmin[i], dmax[i], prefilters[i], spr[i])
        )

    record_len = 2 * sum(spr)
    body = len(data) - header_bytes
    if n_records == -1:
        if record_len == 0 or body % record_len:
            raise EdfHeaderError("cannot infer record count from file size")
        n_records = body // record_len
    if n_records < 0:
        raise EdfHeaderError(f"invalid record count {n_records}")
    expected = n_records * record_len
    if body < expected:
        raise TruncatedEdfError(f"data section has {body} bytes, header implies {expected}")
    if body > expected:
        raise EdfHeaderError(f"data section has {body} bytes, header implies {expected}")
    hdr.n_records = n_records

    raw = np.frombuffer(data, dtype="<i2", offset=header_bytes, count=expected // 2)
    raw = raw.reshape(n_records, record_len // 2) if record_len else raw.reshape(n_records, 0)
    offsets = np.concatenate([[0], np.cumsum(spr)])

    channels, rows, annotations, rates = [], [], [], set()
    for i, sh in enumerate(hdr.signals):
        block = raw[:, offsets[i] : offsets[i + 1]]
        if sh.label == ANNOTATION_LABEL:
            blob = block.astype("<i2").tobytes()
            for r in range(n_records):
                chunk = blob[r * 2 * sh.samples_per_record : (r + 1) * 2 * sh.samples_per_record]
                annotations.extend(_parse_tals(chunk))
            continue
        digital = block.reshape(-1).astype(np.float64)
        rows.append((digital - sh.digital_min) * sh.step + sh.physical_min)
        channels.append(sh.label)
        if hdr.record_duration > 0:
            rates.add(sh.samples_per_record / hdr.record_duration)
    if len(rates) > 1:
        raise EdfError(f"signals have mixed sampling rates {sorted(rates)}")
    if rates:
        fs = rates.pop()
    else:
        fs = 1.0 / hdr.record_duration if hdr.record_duration > 0 else 1.0
    samples = np.vstack(rows) if rows else np.zeros((0, 0))
    annotations.sort(key=lambda a: a.onset)
    return Recording(subject_id, run_id, fs, channels, samples, annotations, hdr)


def read_edf(path, subject_id: int | None = None, run_id: int | None = None) -> Recording:
    """Parse a file on disk; subject/run default to the dataset's ``SxxxRyy`` naming."""
    path = Path(path)
    m = re.search(r"S(\d{3})R(\d{2})", path.name)
    if m:
        subject_id = int(m.group(1)) if subject_id is None else subject_id
        run_id = int(m.group(2)) if run_id is None else run_id
    return parse_edf(path.read_bytes(), subject_id or 0, run_id or 0)


# --------------------------------------------------------------------------
# writing


def _pad(text, width: int, what: str) -> bytes:
    raw = str(text).encode("ascii")
    if len(raw) > width:
        raise EdfError(f"{what} {text!r} exceeds {width} bytes")
    return raw.ljust(width, b" ")


def _fmt_num(x: float, width: int = 8, direction: int = 0) -> str:
    """Shortest text of at most ``width`` chars for ``x``.

    ``direction`` -1/+1 rounds down/up so the written value still encloses ``x``.
    """
    x = float(x)
    if x.is_integer() and len(str(int(x))) <= width:
        return str(int(x))
    for digits in range(width, 0, -1):
        scale = 10.0**digits
        if direction < 0:
            v = math.floor(x * scale) / scale
        elif direction > 0:
            v = math.ceil(x * scale) / scale
        else:
            v = round(x, digits)
        s = f"{v:.{digits}f}".rstrip("0").rstrip(".")
        if len(s) <= width:
            return s
    v = math.floor(x) if direction < 0 else math.ceil(x) if direction > 0 else round(x)
    s = str(int(v))
    if len(s) > width:
        raise EdfError(f"number {x} cannot be written in {width} characters")
    return s


def _tal(onset: float, duration: float | None, texts: list[str]) -> bytes:
    stamp = f"{onset:+g}"
    if duration:
        stamp += f"\x15{duration:g}"
    return (stamp + "\x14" + "".join(t + "\x14" for t in texts)).encode("utf-8") + b"\x00"


def serialize_edf(recording: Recording) -> bytes:
    """Encode a recording as EDF (EDF+C when it carries annotations).

    Signal headers attached to the recording are reused, so a parsed file
    round-trips with identical header fields. Without them, each channel gets
    a physical range spanning its own min/max and 1-second records.
    """
    hdr = recording.header or EdfHeader()
    n_ch = recording.n_channels
    for lab in recording.channel_labels:
        _pad(lab, 16, "channel label")
    fs = recording.sampling_rate
    sig_headers = [s for s in hdr.signals if s.label != ANNOTATION_LABEL] if recording.header else []
    record_duration = hdr.record_duration if recording.header else 1.0
    if len(sig_headers) != n_ch:
        spr = int(round(fs * record_duration))
        if not math.isclose(spr, fs * record_duration, rel_tol=0, abs_tol=1e-9):
            raise EdfError(f"sampling rate {fs} gives a non-integer record length")
        sig_headers = []
        for lab, row in zip(recording.channel_labels, recording.samples):
            lo, hi = (float(row.min()), float(row.max())) if row.size else (-1.0, 1.0)
            if hi - lo < 1e-9:
                lo, hi = lo - 1.0, hi + 1.0
            lo, hi = float(_fmt_num(lo, direction=-1)), float(_fmt_num(hi, direction=1))
            sig_headers.append(SignalHeader(lab, physical_min=lo, physical_max=hi, samples_per_record=spr))
    n_samples = recording.n_samples
    spr_data = sig_headers[0].samples_per_record if sig_headers else 0
    if sig_headers:
        if n_samples % spr_data:
            raise EdfError(f"{n_samples} samples is not a whole number of {spr_data}-sample records")
        n_records = n_samples // spr_data
    else:
        n_records = hdr.n_records if recording.header and recording.annotations else 0

    digital_rows = []
    for sh, row in zip(sig_headers, recording.samples):
        if np.any(~np.isfinite(row)):
            raise EdfError(f"channel {sh.label} has non-finite samples")
        tol = 1e-9 * max(1.0, abs(sh.physical_max), abs(sh.physical_min))
        if row.size and (row.min() < sh.physical_min - tol or row.max() > sh.physical_max + tol):
            raise EdfError(f"channel {sh.label} has values outside [{sh.physical_min}, {sh.physical_max}]")
        d = np.round((row - sh.physical_min) / sh.step + sh.digital_min)
        digital_rows.append(np.clip(d, sh.digital_min, sh.digital_max).astype("<i2"))

    signals = list(sig_headers)
    ann_blocks: list[bytes] = []
    if recording.annotations:
        per_record: list[list[Annotation]] = [[] for _ in range(max(n_records, 1))]
        for a in recording.annotations:
            r = min(int(a.onset // record_duration), len(per_record) - 1) if n_records else 0
            per_record[r].append(a)
        for r, anns in enumerate(per_record):
            blob = _tal(r * record_duration, None, [])
            for a in anns:
                blob += _tal(a.onset, a.duration, [a.label])
            ann_blocks.append(blob)
        n_bytes = max(len(b) for b in ann_blocks)
        n_bytes += n_bytes % 2
        old = [s for s in hdr.signals if s.label == ANNOTATION_LABEL] if recording.header else []
        ann_spr = max(n_bytes // 2, old[0].samples_per_record if old else 0)
        ann_blocks = [b.ljust(2 * ann_spr, b"\x00") for b in ann_blocks]
        signals.append(
            SignalHeader(ANNOTATION_LABEL, "", "", -1, 1, -32768, 32767, "", ann_spr)
        )
        n_records = max(n_records, 1)

    ns = len(signals)
    reserved = hdr.reserved if recording.header else ("EDF+C" if recording.annotations else "")
    head = b"".join(
        [
            _pad("0", 8, "version"),
            _pad(hdr.patient, 80, "patient"),
            _pad(hdr.recording, 80, "recording"),
            _pad(hdr.startdate, 8, "startdate"),
            _pad(hdr.starttime, 8, "starttime"),
            _pad(256 * (ns + 1), 8, "header bytes"),
            _pad(reserved, 44, "reserved"),
            _pad(n_records, 8, "records"),
            _pad(_fmt_num(record_duration), 8, "duration"),
            _pad(ns, 4, "signals"),
        ]
    )
    cols = [
        (16, lambda s: s.label),
        (80, lambda s: s.transducer),
        (8, lambda s: s.physical_dimension),
        (8, lambda s: _fmt_num(s.physical_min)),
        (8, lambda s: _fmt_num(s.physical_max)),
        (8, lambda s: s.digital_min),
        (8, lambda s: s.digital_max),
        (80, lambda s: s.prefilter),
        (8, lambda s: s.samples_per_record),
        (32, lambda s: ""),
    ]
    for width, get in cols:
        head += b"".join(_pad(get(s), width, "signal header field") for s in signals)

    body = bytearray()
    for r in range(n_records):
        for i, sh in enumerate(sig_headers):
            body += digital_rows[i][r * spr_data : (r + 1) * spr_data].tobytes()
        if ann_blocks:
            body += ann_blocks[r] if r < len(ann_blocks) else _tal(r * record_duration, None, []).ljust(
                2 * signals[-1].samples_per_record, b"\x00"
            )
    return head + bytes(body)


# --------------------------------------------------------------------------
# trials and validation


def extract_trials(recording: Recording) -> list[Trial]:
    """One :class:`Trial` per T1/T2 annotation (T1 -> Left, T2 -> Right).

    T0 rest periods are skipped; unknown labels are ignored with a warning.
    Annotations running past the data end are cut to the available samples
    and flagged ``truncated``.
    """
    fs = recording.sampling_rate
    trials = []
    for a in recording.annotations:
        if a.label not in KNOWN_LABELS:
            log.warning("ignoring unknown annotation %r at %.3fs", a.label, a.onset)
            continue
        if a.label not in CLASS_OF_LABEL:
            continue
        # round both ends so that back-to-back annotations tile without overlap
        onset = int(round(a.onset * fs))
        length = int(round((a.onset + a.duration) * fs)) - onset
        truncated = False
        if onset + length > recording.n_samples:
            length = max(0, recording.n_samples - onset)
            truncated = True
            log.warning("trial at %.3fs truncated to %d samples", a.onset, length)
        trials.append(Trial(recording, onset, length, CLASS_OF_LABEL[a.label], len(trials), truncated))
    return trials


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    channel: int | None = None


def validate_recording(recording: Recording, expected_rate: float = 160.0, expected_channels: int = 64) -> list[Violation]:
    """List ways the recording departs from the dataset norm; empty means conformant."""
    report = []
    if not math.isclose(recording.sampling_rate, expected_rate):
        report.append(Violation("sampling_rate", f"{recording.sampling_rate:g} Hz != {expected_rate:g} Hz"))
    if recording.n_channels != expected_channels:
        report.append(Violation("channel_count", f"{recording.n_channels} channels != {expected_channels}"))
    if recording.samples.size:
        bad = np.where(np.isnan(recording.samples).any(axis=1))[0]
        for ch in bad:
            report.append(Violation("nan", f"NaN samples in channel {recording.channel_labels[ch]}", int(ch)))
    if not recording.annotations:
        report.append(Violation("annotations", "recording has no annotations"))
    return report
