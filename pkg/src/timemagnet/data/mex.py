"""MEx-style CSV ingestion and export.

On-disk layout is ``<root>/<participant>/<modality>/<exercise>.csv``. Each
row is ``timestamp,v1,...,vk`` with the timestamp in seconds carrying
microsecond precision. Timestamps are held internally as int64 microseconds
so that grid comparisons are exact. A leading header row (first field not
numeric) is skipped. Exercise files are named by their integer label, with
optional non-digit prefix (``ex3.csv`` and ``3.csv`` both mean label 3).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import MODALITIES

ARITY = {"act": 3, "acw": 3, "dc": 12 * 16, "pm": 32 * 16}
N_CLASSES = 7


class MexFormatError(ValueError):
    """Malformed recording; the message names the file and line."""


@dataclass
class Stream:
    timestamps: np.ndarray  # int64 microseconds, strictly increasing
    values: np.ndarray  # n × arity

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.timestamps) != len(self.values):
            raise ValueError(f"{len(self.timestamps)} timestamps for {len(self.values)} samples")

    def __len__(self):
        return len(self.timestamps)

    @property
    def arity(self) -> int:
        return self.values.shape[1]


@dataclass
class RawRecording:
    participant: str
    label: int
    streams: dict = field(default_factory=dict)  # modality -> Stream

    def __post_init__(self):
        if not 0 <= self.label < N_CLASSES:
            raise ValueError(f"exercise label {self.label} outside [0, {N_CLASSES})")
        for m, s in self.streams.items():
            if s.arity != ARITY[m]:
                raise ValueError(f"{m} stream has arity {s.arity}, expected {ARITY[m]}")


def parse_timestamp(text: str) -> int:
    """Seconds string -> integer microseconds, exact for up to six decimals."""
    text = text.strip()
    m = re.fullmatch(r"([+-]?)(\d*)(?:\.(\d*))?", text)
    if m is None or not (m.group(2) or m.group(3)):
        return int(round(float(text) * 1e6))  # scientific notation etc; raises ValueError if garbage
    sign, whole, frac = m.group(1), m.group(2) or "0", m.group(3) or ""
    if len(frac) > 6:
        us = int(round(float("0." + frac) * 1e6))
    else:
        us = int(frac.ljust(6, "0"))
    total = int(whole) * 1_000_000 + us
    return -total if sign == "-" else total


def format_timestamp(us: int) -> str:
    us = int(us)
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // 1_000_000}.{us % 1_000_000:06d}"


def _is_header(first_field: str) -> bool:
    try:
        float(first_field)
        return False
    except ValueError:
        return True


def parse_mex_lines(lines, modality: str, source: str = "<memory>") -> Stream:
    if modality not in ARITY:
        raise MexFormatError(f"{source}: unknown modality {modality!r}")
    arity = ARITY[modality]
    ts, rows = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if lineno == 1 and _is_header(parts[0]):
            continue
        if len(parts) - 1 != arity:
            raise MexFormatError(f"{source}:{lineno}: {modality} row has {len(parts) - 1} values, expected {arity}")
        try:
            t = parse_timestamp(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise MexFormatError(f"{source}:{lineno}: unparsable number in row") from None
        if ts and t <= ts[-1]:
            raise MexFormatError(f"{source}:{lineno}: timestamp {parts[0]} is not after the previous one")
        ts.append(t)
        rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), arity)
    return Stream(np.array(ts, dtype=np.int64), values)


def parse_mex_csv(path, modality: str) -> Stream:
    path = Path(path)
    with path.open() as fh:
        return parse_mex_lines(fh, modality, source=str(path))


def write_mex_csv(path, stream: Stream) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for t, row in zip(stream.timestamps, stream.values):
            fh.write(format_timestamp(t) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _label_from_name(name: str) -> int:
    m = re.search(r"(\d+)$", name)
    if m is None:
        raise MexFormatError(f"cannot read an exercise label from file name {name!r}")
    return int(m.group(1))


def read_mex_tree(root, modalities=MODALITIES) -> list[RawRecording]:
    """Load every (participant, exercise) that has all requested modalities.

    Recordings come back sorted by participant then label.
    """
    root = Path(root)
    if not root.is_dir():
        raise MexFormatError(f"data root {root} is not a directory")
    recs = []
    for pdir in sorted(p for p in root.iterdir() if p.is_dir()):
        by_label: dict[int, dict] = {}
        for m in modalities:
            mdir = pdir / m
            if not mdir.is_dir():
                continue
            for f in sorted(mdir.glob("*.csv")):
                by_label.setdefault(_label_from_name(f.stem), {})[m] = parse_mex_csv(f, m)
        for label in sorted(by_label):
            streams = by_label[label]
            if all(m in streams for m in modalities):
                recs.append(RawRecording(pdir.name, label, streams))
    return recs


def write_mex_tree(root, recordings) -> None:
    root = Path(root)
    for rec in recordings:
        for m, s in rec.streams.items():
            write_mex_csv(root / rec.participant / m / f"{rec.label}.csv", s)
