import json
import logging

import numpy as np
import pytest

from timemagnet.checkpoint import (
    MAGIC,
    CheckpointError,
    export_metrics,
    load_checkpoint,
    load_state,
    save_checkpoint,
    save_state,
)
from timemagnet.config import resolve
from timemagnet.fed.metrics import report_from_logits
from timemagnet.fusion import build_model


@pytest.fixture(scope="module")
def desk_model():
    return build_model(resolve("desk"))


def perturb(model, seed=1):
    r = np.random.default_rng(seed)
    for p in model.parameters():
        p.data[...] = r.normal(size=p.shape)


class TestRoundTrip:
    def test_desk_model_bit_exact(self, desk_model, tmp_path):
        path = save_checkpoint(desk_model, tmp_path / "m.tmgn")
        other = build_model(resolve("desk"))
        perturb(other)
        load_checkpoint(path, other)
        a, b = desk_model.state_dict(), other.state_dict()
        assert list(a) == list(b)
        for n in a:
            assert a[n].tobytes() == b[n].tobytes(), n

    def test_layout(self, tmp_path):
        state = {"x": np.arange(3.0), "y": np.ones((2, 2))}
        raw = save_state(tmp_path / "s.tmgn", state, "abc").read_bytes()
        assert raw[:5] == MAGIC
        mlen = int.from_bytes(raw[5:13], "little")
        manifest = json.loads(raw[13:13 + mlen])
        assert manifest["config_hash"] == "abc"
        assert [(e["name"], e["offset"], e["nbytes"]) for e in manifest["params"]] == [("x", 0, 24), ("y", 24, 32)]
        np.testing.assert_array_equal(np.frombuffer(raw[13 + mlen:], "<f8"), [0, 1, 2, 1, 1, 1, 1])

    def test_special_values_survive(self, tmp_path):
        state = {"v": np.array([np.nan, np.inf, -0.0, 5e-324])}
        back, _ = load_state(save_state(tmp_path / "s.tmgn", state))
        assert back["v"].tobytes() == state["v"].tobytes()


class TestCorruption:
    def _file(self, tmp_path):
        return save_state(tmp_path / "s.tmgn", {"x": np.arange(4.0)})

    def test_bad_magic(self, tmp_path):
        p = self._file(tmp_path)
        p.write_bytes(b"XXXXX" + p.read_bytes()[5:])
        with pytest.raises(CheckpointError, match="magic"):
            load_state(p)

    def test_truncated_blob(self, tmp_path):
        p = self._file(tmp_path)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_state(p)

    def test_truncated_header(self, tmp_path):
        p = self._file(tmp_path)
        p.write_bytes(p.read_bytes()[:8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_state(p)

    def test_extra_bytes(self, tmp_path):
        p = self._file(tmp_path)
        p.write_bytes(p.read_bytes() + b"\0" * 8)
        with pytest.raises(CheckpointError, match="manifest declares"):
            load_state(p)

    def test_overlapping_entries(self, tmp_path):
        manifest = json.dumps({"config_hash": "", "blob_size": 16, "params": [
            {"name": "a", "shape": [2], "dtype": "<f8", "offset": 0, "nbytes": 16},
            {"name": "b", "shape": [1], "dtype": "<f8", "offset": 8, "nbytes": 8}]}).encode()
        p = tmp_path / "bad.tmgn"
        p.write_bytes(MAGIC + len(manifest).to_bytes(8, "little") + manifest + b"\0" * 16)
        with pytest.raises(CheckpointError, match="overlaps"):
            load_state(p)


class TestConfigMismatch:
    def test_warns_and_loads_intersection(self, tmp_path, caplog):
        src = build_model(resolve("desk", {"fusion_blocks": 2}))
        perturb(src, seed=3)
        path = save_checkpoint(src, tmp_path / "m.tmgn")
        dst = build_model(resolve("desk", {"fusion_blocks": 3}))
        before = dst.state_dict()
        with caplog.at_level(logging.WARNING):
            loaded = load_checkpoint(path, dst)
        assert "config" in caplog.text
        s_src, s_dst = src.state_dict(), dst.state_dict()
        shared = [n for n in s_src if n in s_dst and s_src[n].shape == s_dst[n].shape]
        assert sorted(loaded) == sorted(shared)
        for n in s_dst:
            want = s_src[n] if n in shared else before[n]
            np.testing.assert_array_equal(s_dst[n], want, err_msg=n)
        assert any(n.startswith("fusion.blocks.2.") for n in s_dst if n not in shared)


class TestExportMetrics:
    def test_perfect_report(self, tmp_path):
        labels = np.array([0, 1, 2, 2, 6])
        logits = np.eye(7)[labels] * 5.0
        rep = report_from_logits(logits, labels, 7)
        paths = export_metrics(rep, tmp_path / "out", embeddings=np.ones((5, 3)), labels=labels)
        doc = json.loads(paths["metrics"].read_text())
        assert doc["accuracy"] == 1.0
        cm = np.array(doc["confusion_matrix"])
        assert cm.sum() == 5
        np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(labels, minlength=7))
        rows = paths["pr"].read_text().splitlines()
        assert rows[0] == "class,threshold,precision,recall"
        for line in rows[1:]:
            _, _, p, r = map(float, line.split(","))
            assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0
        emb = paths["embeddings"].read_text().splitlines()
        assert emb[0] == "label,e0,e1,e2" and len(emb) == 6

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        rep = report_from_logits(np.zeros((2, 7)), [0, 1], 7)
        with pytest.raises(OSError, match="cannot create"):
            export_metrics(rep, blocker / "sub", embeddings=None)
