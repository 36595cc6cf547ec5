"""Resampling, windowing, cross-modal alignment, normalisation, augmentation
and participant-level splitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import IMAGE_MODALITIES, MODALITIES
from .mex import N_CLASSES, RawRecording, Stream

log = logging.getLogger(__name__)

US = 1_000_000


# ---------------------------------------------------------------- resampling

def resample_linear(stream: Stream, rate: float, start: int | None = None) -> Stream:
    """Uniform grid ``start + k/rate`` up to the last input timestamp, linearly interpolated.

    ``start`` defaults to the first timestamp and must lie inside the stream.
    Values are interpolated at the exact grid time; stored timestamps are
    rounded to whole microseconds.
    """
    if rate <= 0:
        raise ValueError(f"target rate must be > 0, got {rate}")
    if len(stream) < 2:
        raise ValueError("resampling needs at least two samples")
    ts = stream.timestamps
    t0 = int(ts[0]) if start is None else int(start)
    if t0 < ts[0] or t0 > ts[-1]:
        raise ValueError(f"grid start {t0} outside the stream span [{ts[0]}, {ts[-1]}]")
    step = US / rate
    n = int(math.floor((ts[-1] - t0) / step + 1e-9)) + 1
    # offsets relative to t0 keep the float arithmetic well conditioned for epoch timestamps
    grid = np.arange(n) * step
    rel = (ts - t0).astype(np.float64)
    idx = np.clip(np.searchsorted(rel, grid, side="right") - 1, 0, len(ts) - 2)
    lo, hi = rel[idx], rel[idx + 1]
    frac = ((grid - lo) / (hi - lo))[:, None]
    vals = stream.values[idx] * (1.0 - frac) + stream.values[idx + 1] * frac
    return Stream(t0 + np.round(grid).astype(np.int64), vals)


# ----------------------------------------------------------------- windowing

def window_count(n_samples: int, window: int, stride: int) -> int:
    if window <= 0 or stride <= 0:
        raise ValueError("window and stride must be positive")
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def segment_windows(values: np.ndarray, window: int, stride: int) -> np.ndarray:
    """n_windows × window × ... array of full windows; trailing partials dropped."""
    values = np.asarray(values)
    n = window_count(len(values), window, stride)
    if n == 0:
        return np.zeros((0, window) + values.shape[1:], dtype=values.dtype)
    starts = np.arange(n) * stride
    return values[starts[:, None] + np.arange(window)[None, :]]


def _samples(seconds: float, rate: float) -> int:
    n = seconds * rate
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{seconds} s at {rate} Hz is not a whole number of samples")
    return int(round(n))


@dataclass
class AlignedWindows:
    windows: dict  # modality -> n × frames × ...
    starts: np.ndarray  # int64 µs, shared by every modality
    dropped: int  # windows discarded across modalities because they had no partner


def align_multimodal(streams: dict, rates: dict, window_s: float, stride_s: float,
                     grids: dict | None = None) -> AlignedWindows:
    """Resample onto grids sharing one anchor, window each modality, keep windows whose
    start time exists in every modality."""
    mods = list(streams)
    anchor = max(int(streams[m].timestamps[0]) for m in mods)
    per_mod, start_sets = {}, {}
    for m in mods:
        s = streams[m]
        if anchor > s.timestamps[-1]:
            log.warning("align_multimodal: streams share no common span; no windows produced")
            return _empty_aligned(mods, rates, window_s, grids)
        r = resample_linear(s, rates[m], start=anchor)
        w, st = _samples(window_s, rates[m]), _samples(stride_s, rates[m])
        wins = segment_windows(r.values, w, st)
        starts = r.timestamps[np.arange(len(wins)) * st]
        per_mod[m] = (wins, starts)
        start_sets[m] = set(starts.tolist())
    common = sorted(set.intersection(*start_sets.values()))
    if not common:
        log.warning("align_multimodal: no window start is shared by all modalities")
    dropped = 0
    out = {}
    for m in mods:
        wins, starts = per_mod[m]
        keep = np.isin(starts, common)
        dropped += int((~keep).sum())
        wins = wins[keep]
        if grids and m in grids:
            wins = wins.reshape(len(wins), wins.shape[1], *grids[m])
        out[m] = wins
    if dropped:
        log.info("align_multimodal: dropped %d unpaired windows", dropped)
    return AlignedWindows(out, np.array(common, dtype=np.int64), dropped)


def _empty_aligned(mods, rates, window_s, grids) -> AlignedWindows:
    out = {}
    for m in mods:
        w = _samples(window_s, rates[m])
        tail = tuple(grids[m]) if grids and m in grids else (3,)
        out[m] = np.zeros((0, w) + tail)
    return AlignedWindows(out, np.zeros(0, dtype=np.int64), 0)


# ------------------------------------------------------------------- dataset

@dataclass
class WindowDataset:
    arrays: dict  # modality -> N × frames × ...
    labels: np.ndarray
    participants: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.participants = np.asarray(self.participants, dtype=object)
        n = len(self.labels)
        for m, a in self.arrays.items():
            if len(a) != n:
                raise ValueError(f"{m} has {len(a)} windows for {n} labels")
        if len(self.participants) != n:
            raise ValueError("participants and labels differ in length")

    def __len__(self):
        return len(self.labels)

    @property
    def modalities(self) -> list:
        return [m for m in MODALITIES if m in self.arrays]

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowDataset({m: a[idx] for m, a in self.arrays.items()}, self.labels[idx], self.participants[idx])

    def select_modalities(self, mods) -> "WindowDataset":
        return WindowDataset({m: self.arrays[m] for m in mods}, self.labels, self.participants)

    def participant_ids(self) -> list:
        return sorted(set(self.participants.tolist()))

    def by_participant(self) -> dict:
        return {p: self.subset(np.nonzero(self.participants == p)[0]) for p in self.participant_ids()}

    def batch(self, idx) -> dict:
        out = {m: a[idx] for m, a in self.arrays.items()}
        out["label"] = self.labels[idx]
        return out

    def batches(self, batch_size: int, rng=None):
        """Yield batch dicts; shuffled when an rng is given, in order otherwise."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for i in range(0, len(order), batch_size):
            yield self.batch(order[i:i + batch_size])

    @staticmethod
    def concat(parts) -> "WindowDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("cannot concatenate an empty list of datasets")
        mods = parts[0].arrays.keys()
        return WindowDataset({m: np.concatenate([p.arrays[m] for p in parts]) for m in mods},
                             np.concatenate([p.labels for p in parts]),
                             np.concatenate([p.participants for p in parts]))


def window_recording(rec: RawRecording, cfg, modalities=None) -> tuple[WindowDataset, int]:
    mods = list(modalities or cfg.modalities)
    rates = {m: cfg.image_rate if m in IMAGE_MODALITIES else cfg.accel_rate for m in mods}
    grids = {"dc": tuple(cfg.dc_grid), "pm": tuple(cfg.pm_grid)}
    al = align_multimodal({m: rec.streams[m] for m in mods}, rates, cfg.window_s, cfg.stride_s, grids)
    n = len(al.starts)
    return WindowDataset(al.windows, np.full(n, rec.label), np.full(n, rec.participant, dtype=object)), al.dropped


def build_dataset(recordings, cfg, modalities=None) -> WindowDataset:
    parts, dropped = [], 0
    for rec in recordings:
        ds, d = window_recording(rec, cfg, modalities)
        parts.append(ds)
        dropped += d
    if dropped:
        log.info("build_dataset: %d unpaired windows dropped in total", dropped)
    return WindowDataset.concat(parts)


# ------------------------------------------------------------- normalisation

@dataclass
class NormStats:
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)


def _reduce_axes(modality: str, arr: np.ndarray) -> tuple:
    # accelerometers normalise per axis; image modalities pool every pixel into one channel
    if modality in IMAGE_MODALITIES:
        return tuple(range(arr.ndim))
    return tuple(range(arr.ndim - 1))


def fit_zscore(arrays: dict) -> NormStats:
    stats = NormStats()
    for m, a in arrays.items():
        axes = _reduce_axes(m, a)
        mu = a.mean(axis=axes)
        sd = a.std(axis=axes)  # population std
        bad = np.asarray(sd < 1e-8)
        if bad.any():
            log.warning("zscore: %s has %d near-constant channel(s); using sigma=1", m, int(bad.sum()))
            sd = np.where(bad, 1.0, sd)
        stats.mean[m], stats.std[m] = mu, sd
    return stats


def apply_zscore(arrays: dict, stats: NormStats) -> dict:
    return {m: (a - stats.mean[m]) / stats.std[m] for m, a in arrays.items()}


def zscore_normalize(arrays: dict, stats: NormStats | None = None) -> tuple[dict, NormStats]:
    """Normalise with the given statistics, fitting them on ``arrays`` when none are passed."""
    if stats is None:
        stats = fit_zscore(arrays)
    return apply_zscore(arrays, stats), stats


def normalize_dataset(ds: WindowDataset, stats: NormStats) -> WindowDataset:
    return WindowDataset(apply_zscore(ds.arrays, stats), ds.labels, ds.participants)


# -------------------------------------------------------------- augmentation

def augment_gaussian(x: np.ndarray, sigma: float, rng, train: bool = True) -> np.ndarray:
    if not train or sigma == 0:
        return x
    return x + rng.normal(0.0, sigma, size=np.shape(x))


def augment_batch(batch: dict, sigma: float, rng, train: bool = True) -> dict:
    out = dict(batch)
    for m in MODALITIES:
        if m in out:
            out[m] = augment_gaussian(out[m], sigma, rng, train)
    return out


# ----------------------------------------------------------------- splitting

@dataclass
class SplitSpec:
    train: list
    val: list
    test: list

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.test)]
        for name, ids, s in zip(("train", "val", "test"), (self.train, self.val, self.test), sets):
            if len(s) != len(ids):
                raise ValueError(f"split {name} lists a participant twice")
        names = ("train", "val", "test")
        for i, j in ((0, 1), (0, 2), (1, 2)):
            common = sets[i] & sets[j]
            if common:
                raise ValueError(f"participants {sorted(common)} appear in both {names[i]} and {names[j]}")

    def owner(self) -> dict:
        own = {p: "train" for p in self.train}
        own.update({p: "val" for p in self.val})
        own.update({p: "test" for p in self.test})
        return own


def make_split(participants, counts=(21, 3, 6)) -> SplitSpec:
    """Sorted participants, first block to train, next to val, rest to test."""
    ids = sorted(set(participants))
    n_tr, n_va, n_te = counts
    if n_tr + n_va + n_te != len(ids):
        raise ValueError(f"split counts {tuple(counts)} do not cover {len(ids)} participants")
    return SplitSpec(ids[:n_tr], ids[n_tr:n_tr + n_va], ids[n_tr + n_va:])


def split_by_participant(ds: WindowDataset, spec: SplitSpec) -> tuple:
    own = spec.owner()
    unknown = sorted(set(ds.participants.tolist()) - set(own))
    if unknown:
        raise ValueError(f"participants {unknown} are not assigned to any split")
    where = np.array([own[p] for p in ds.participants])
    return tuple(ds.subset(np.nonzero(where == s)[0]) for s in ("train", "val", "test"))


def class_weights(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Inverse-frequency weights ``N / (C n_c)``; absent classes get 1 with a warning."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    w = np.ones(n_classes)
    present = counts > 0
    if not present.all():
        log.warning("class_weights: classes %s missing from the training split", np.nonzero(~present)[0].tolist())
    w[present] = len(labels) / (n_classes * counts[present])
    return w


@dataclass
class PreparedData:
    train: WindowDataset
    val: WindowDataset
    test: WindowDataset
    stats: NormStats
    split: SplitSpec

    def train_clients(self) -> dict:
        return self.train.by_participant()


def prepare(ds: WindowDataset, split: SplitSpec) -> PreparedData:
    """Split, fit normalisation on train only, apply the same statistics everywhere."""
    tr, va, te = split_by_participant(ds, split)
    stats = fit_zscore(tr.arrays)
    return PreparedData(normalize_dataset(tr, stats), normalize_dataset(va, stats),
                        normalize_dataset(te, stats), stats, split)
