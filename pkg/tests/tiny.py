"""A very small model and dataset shared by the training-loop tests."""

from timemagnet.config import resolve
from timemagnet.data import make_split, prepare, synth_dataset

TINY = dict(ts_dim=8, ts_heads=2, ts_head_dim=4, ts_ff_dim=8, ts_layers=1, lora_rank=2, lora_alpha=4.0,
            dart_channels=[2, 4], dart_reduction=2, dart_emb=4, dart_hidden=2, fusion_dim=8, fusion_blocks=1,
            synth_participants=5, synth_windows_per_client=7, split_counts=[3, 1, 1], batch_size=4)


def tiny_cfg(**kw):
    return resolve("desk", {**TINY, **kw})


def tiny_data(cfg):
    ds = synth_dataset(cfg)
    return prepare(ds, make_split(ds.participant_ids(), cfg.split_counts))
