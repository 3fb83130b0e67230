"""Dataset generation, encodings, IDX ingestion."""

import numpy as np
import pytest

from spikeprune.data import (
    class_prototypes,
    encode_direct,
    encode_rate,
    load_idx_images,
    patchify,
    synth_dataset,
    write_idx_images,
    write_idx_labels,
)
from spikeprune.errors import ConfigError, FormatError


class TestSynthetic:
    def test_prototype_oracle_accuracy(self):
        """Nearest-prototype on per-patch mean rates classifies >= 95%."""
        ds = synth_dataset(classes=4, patches=16, d_in=32, T=4,
                           n_train=200, n_test=100, r_high=0.8, r_low=0.05, seed=0)
        protos = class_prototypes(4, 16, 32, 0.8, 0.05)
        rates = ds.x_test.mean(axis=0)  # [n, N, d_in]
        dists = ((rates[:, None] - protos[None]) ** 2).sum(axis=(2, 3))
        pred = dists.argmin(axis=1)
        assert (pred == ds.y_test).mean() >= 0.95

    def test_same_seed_identical(self):
        a = synth_dataset(4, 16, 32, 4, 32, 16, seed=5)
        b = synth_dataset(4, 16, 32, 4, 32, 16, seed=5)
        assert a.x_train.tobytes() == b.x_train.tobytes()
        assert (a.y_train == b.y_train).all()
        assert a.x_test.tobytes() == b.x_test.tobytes()

    def test_different_seed_differs(self):
        a = synth_dataset(4, 16, 32, 4, 32, 16, seed=5)
        b = synth_dataset(4, 16, 32, 4, 32, 16, seed=6)
        assert a.x_train.tobytes() != b.x_train.tobytes()

    def test_labels_balanced(self):
        ds = synth_dataset(classes=4, patches=16, d_in=32, T=2,
                           n_train=103, n_test=50, seed=1)
        counts = np.bincount(ds.y_train, minlength=4)
        assert counts.max() - counts.min() <= 1
        assert counts.sum() == 103

    def test_degenerate_rates_rejected(self):
        with pytest.raises(ConfigError):
            synth_dataset(4, 16, 32, 4, 32, 16, r_high=0.05, r_low=0.8)
        with pytest.raises(ConfigError):
            synth_dataset(4, 16, 32, 4, 32, 16, r_high=0.5, r_low=0.5)

    def test_needs_two_classes_and_room(self):
        with pytest.raises(ConfigError):
            synth_dataset(1, 16, 32, 4, 32, 16)
        with pytest.raises(ConfigError):
            synth_dataset(4, 2, 32, 4, 32, 16)
        with pytest.raises(ConfigError):
            synth_dataset(4, 16, 16, 4, 32, 16)  # no room for identity flags

    def test_spikes_binary_and_identity_flags(self):
        ds = synth_dataset(4, 8, 16, 3, 16, 8, seed=2)
        assert set(np.unique(ds.x_train)).issubset({0.0, 1.0})
        flags = ds.x_train[:, :, :, 8:]  # [T, n, N, patches]
        for j in range(8):
            assert (flags[:, :, j, j] == 1.0).all()


class TestEncodings:
    def test_all_black_rate_coding_is_silent(self):
        frames = np.zeros((2, 4, 4), dtype=np.float32)
        spikes = encode_rate(frames, T=8, seed=0)
        np.testing.assert_array_equal(spikes, 0.0)

    def test_direct_repeats_frame(self):
        frames = np.random.default_rng(0).random((3, 4, 4)).astype(np.float32)
        out = encode_direct(frames, T=5)
        assert out.shape == (5, 3, 4, 4)
        for t in range(5):
            np.testing.assert_array_equal(out[t], frames)

    def test_rate_concentration(self):
        frames = np.full((1, 2, 2), 0.5, dtype=np.float32)
        spikes = encode_rate(frames, T=1000, seed=3)
        assert abs(spikes.mean() - 0.5) <= 0.05


class TestIdx:
    def test_roundtrip_and_patchify(self, tmp_path, rng):
        images = (rng.random((10, 8, 8)) * 255).astype(np.uint8)
        labels = rng.integers(0, 4, size=10).astype(np.uint8)
        ip, lp = tmp_path / "imgs.idx", tmp_path / "labels.idx"
        write_idx_images(ip, images)
        write_idx_labels(lp, labels)
        ds = load_idx_images(str(ip), str(lp), "direct", T=2, seed=0, patch_size=4)
        assert ds.x_train.shape == (2, 8, 4, 16)
        assert ds.x_test.shape == (2, 2, 4, 16)
        np.testing.assert_allclose(
            ds.x_train[0, 0].reshape(-1).max(), images[0].max() / 255.0, rtol=1e-6
        )

    def test_rate_encoding_of_images(self, tmp_path, rng):
        images = np.zeros((4, 4, 4), dtype=np.uint8)
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(ip, images)
        write_idx_labels(lp, np.zeros(4, dtype=np.uint8))
        ds = load_idx_images(str(ip), str(lp), "rate", T=3, seed=0, patch_size=2)
        np.testing.assert_array_equal(ds.x_train, 0.0)

    def test_bad_magic_names_offset(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 16)
        with pytest.raises(FormatError, match="byte 0"):
            load_idx_images(str(path), str(path), "rate", T=2, seed=0)

    def test_truncation_names_offset(self, tmp_path):
        import struct

        path = tmp_path / "trunc.idx"
        path.write_bytes(struct.pack(">IIII", 0x803, 10, 8, 8) + b"\x00" * 5)
        lp = tmp_path / "l.idx"
        write_idx_labels(lp, np.zeros(10, dtype=np.uint8))
        with pytest.raises(FormatError, match="truncated"):
            load_idx_images(str(path), str(lp), "rate", T=2, seed=0)

    def test_count_mismatch(self, tmp_path, rng):
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(ip, np.zeros((4, 4, 4), dtype=np.uint8))
        write_idx_labels(lp, np.zeros(5, dtype=np.uint8))
        with pytest.raises(FormatError, match="4 images but 5 labels"):
            load_idx_images(str(ip), str(lp), "rate", T=2, seed=0)

    def test_patchify_divisibility(self):
        with pytest.raises(ConfigError):
            patchify(np.zeros((1, 9, 9)), 4)

    def test_bad_encoding(self, tmp_path):
        with pytest.raises(ConfigError):
            load_idx_images("x", "y", "fourier", T=2, seed=0)
