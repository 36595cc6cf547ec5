"""Synthetic non-IID multimodal activity data.

Every (participant, class) pair yields one continuous recording per modality:

* act/acw: three-axis sinusoids at ``(c+1) * 0.4`` Hz with axis phases spaced
  by 2π/3, scaled by a per-participant amplitude drawn once from [0.7, 1.3],
  plus N(0, 0.05²) noise.
* dc: a bright Gaussian blob sliding horizontally at a speed set by the class.
* pm: a static pressure patch whose area grows with the class.

Participant-specific nuisance factors (amplitude, blob row and width, patch
position) make the client distributions differ. Recordings carry
epoch-microsecond timestamps with jittered interior samples and exact
endpoints, so the resampler and the window formula agree on counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff.rng import stream
from ..config import MODALITIES
from .mex import RawRecording, Stream, write_mex_tree
from .preprocess import WindowDataset, build_dataset

EPOCH0_US = 1_600_000_000 * 1_000_000


@dataclass
class SynthSpec:
    base_freq: float = 0.4
    amp_range: tuple = (0.7, 1.3)
    accel_noise: float = 0.05
    blob_speed: float = 4.0  # pixels per second per class step
    blob_sigma: float = 1.5
    image_noise: float = 0.1
    patch_unit: int = 16  # pixels of patch area per class step
    jitter: float = 0.2  # fraction of a sample period


def participant_name(i: int) -> str:
    return f"p{i + 1:02d}"


def _timestamps(t0: int, duration_s: float, rate: float, jitter: float, rng) -> np.ndarray:
    step = 1e6 / rate
    n = int(round(duration_s * rate)) + 1
    grid = np.arange(n) * step
    grid[1:-1] += rng.uniform(-jitter, jitter, size=n - 2) * step
    return t0 + np.round(grid).astype(np.int64)


def _accel(t_s: np.ndarray, freq: float, amp: float, phase0: float, noise: float, rng) -> np.ndarray:
    phases = phase0 + 2 * np.pi * np.arange(3) / 3
    x = amp * np.sin(2 * np.pi * freq * t_s[:, None] + phases[None, :])
    return x + rng.normal(0.0, noise, size=x.shape)


def _blob_frames(t_s, grid, speed, x0, row, sigma, noise, rng) -> np.ndarray:
    h, w = grid
    yy, xx = np.mgrid[0:h, 0:w]
    frames = np.empty((len(t_s), h, w))
    for i, t in enumerate(t_s):
        cx = (x0 + speed * t) % w
        dx = np.minimum(np.abs(xx - cx), w - np.abs(xx - cx))  # wrap horizontally
        frames[i] = np.exp(-(dx ** 2 + (yy - row) ** 2) / (2 * sigma ** 2))
    frames += rng.normal(0.0, noise, size=frames.shape)
    return frames.reshape(len(t_s), -1)


def _patch_frames(n, grid, area, cy, cx, noise, rng) -> np.ndarray:
    h, w = grid
    side_h = max(1, int(round(np.sqrt(area * 2))))
    side_w = max(1, int(round(area / side_h)))
    base = np.zeros((h, w))
    y0 = int(np.clip(cy - side_h // 2, 0, h - side_h))
    x0 = int(np.clip(cx - side_w // 2, 0, w - side_w))
    base[y0:y0 + side_h, x0:x0 + side_w] = 1.0
    frames = base[None] + rng.normal(0.0, noise, size=(n, h, w))
    return frames.reshape(n, -1)


def windows_per_class(windows_per_client: int, n_classes: int = 7) -> list:
    base, extra = divmod(windows_per_client, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


def synth_recordings(n_clients: int, windows_per_client: int, seed: int, cfg,
                     spec: SynthSpec | None = None) -> list[RawRecording]:
    if n_clients < 1:
        raise ValueError("need at least one synthetic client")
    spec = spec or SynthSpec()
    dc_grid, pm_grid = tuple(cfg.dc_grid), tuple(cfg.pm_grid)
    recs = []
    for i in range(n_clients):
        prng = stream(seed, "synth", "client", i)
        amp = {m: prng.uniform(*spec.amp_range) for m in ("act", "acw")}
        acw_phase = prng.uniform(0, 2 * np.pi)
        blob_row = prng.uniform(2, dc_grid[0] - 3)
        blob_sigma = spec.blob_sigma * prng.uniform(0.8, 1.25)
        patch_c = (prng.integers(pm_grid[0] // 4, 3 * pm_grid[0] // 4), prng.integers(4, pm_grid[1] - 4))
        for c, k in enumerate(windows_per_class(windows_per_client, cfg.n_classes)):
            if k == 0:
                continue
            rng = stream(seed, "synth", "rec", i, c)
            duration = cfg.window_s + (k - 1) * cfg.stride_s
            t0 = EPOCH0_US + (i * 3600 + c * 60) * 1_000_000
            freq = (c + 1) * spec.base_freq
            streams = {}
            for m in ("act", "acw"):
                ts = _timestamps(t0, duration, cfg.accel_rate, spec.jitter, rng)
                t_s = (ts - t0) / 1e6
                streams[m] = Stream(ts, _accel(t_s, freq, amp[m], 0.0 if m == "act" else acw_phase,
                                               spec.accel_noise, rng))
            ts = _timestamps(t0, duration, cfg.image_rate, spec.jitter, rng)
            t_s = (ts - t0) / 1e6
            streams["dc"] = Stream(ts, _blob_frames(t_s, dc_grid, spec.blob_speed * (c + 1), rng.uniform(0, dc_grid[1]),
                                                    blob_row, blob_sigma, spec.image_noise, rng))
            ts = _timestamps(t0, duration, cfg.image_rate, spec.jitter, rng)
            streams["pm"] = Stream(ts, _patch_frames(len(ts), pm_grid, spec.patch_unit * (c + 1), *patch_c,
                                                     spec.image_noise, rng))
            recs.append(RawRecording(participant_name(i), c, streams))
    return recs


def synth_generate(n_clients: int, windows_per_client: int, seed: int, cfg,
                   spec: SynthSpec | None = None) -> dict:
    """participant id -> WindowDataset, windowed through the regular pipeline."""
    recs = synth_recordings(n_clients, windows_per_client, seed, cfg, spec)
    ds = build_dataset(recs, cfg, modalities=MODALITIES)
    return ds.by_participant()


def synth_dataset(cfg, spec: SynthSpec | None = None) -> WindowDataset:
    parts = synth_generate(cfg.synth_participants, cfg.synth_windows_per_client, cfg.seed, cfg, spec)
    return WindowDataset.concat([parts[p] for p in sorted(parts)])


def synth_export(root, cfg, spec: SynthSpec | None = None) -> list[RawRecording]:
    recs = synth_recordings(cfg.synth_participants, cfg.synth_windows_per_client, cfg.seed, cfg, spec)
    write_mex_tree(root, recs)
    return recs
