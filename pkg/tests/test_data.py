import json

import numpy as np
import pytest

from bnnfake.data import (
    decode_pnm,
    encode_pnm,
    generate_synthetic,
    high_band_energy,
    load_samples,
    scan_directory,
    synth_image,
)
from bnnfake.errors import DataError
from bnnfake.features import to_grayscale


class TestPNM:
    def test_single_red_pixel(self):
        img = decode_pnm(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        np.testing.assert_array_equal(img, [[[1.0]], [[0.0]], [[0.0]]])

    def test_p5_ramp(self):
        img = decode_pnm(b"P5 2 2 255\n" + bytes([0, 85, 170, 255]))
        assert img.shape == (1, 2, 2)
        np.testing.assert_allclose(img.ravel(), [0, 1 / 3, 2 / 3, 1], atol=1e-6)
        assert decode_pnm(b"P5 2 2 255\n" + bytes([0, 85, 170, 255]), rgb=True).shape == (3, 2, 2)

    def test_header_comments(self):
        img = decode_pnm(b"P6\n# made by hand\n1 1\n# max\n255\n" + bytes([0, 255, 0]))
        assert img[1, 0, 0] == 1.0

    def test_round_trip(self, rng):
        img = rng.integers(0, 256, (3, 7, 9)) / 255.0
        np.testing.assert_allclose(decode_pnm(encode_pnm(img)), img, atol=1e-12)
        g = rng.integers(0, 256, (5, 4)) / 255.0
        np.testing.assert_allclose(decode_pnm(encode_pnm(g))[0], g, atol=1e-12)

    @pytest.mark.parametrize("blob", [
        b"P3\n1 1\n255\n000",
        b"GIF89a",
        b"P6\n",
        b"P6\n2 2\n255\n" + bytes(11),
        b"P6\n99999999 99999999\n255\n",
        b"P6\n1 1\n65535\n" + bytes(6),
        b"P6\n0 1\n255\n",
        b"P6\n1 1\n255",
        b"P6\n-1 1\n255\n",
    ])
    def test_malformed(self, blob):
        with pytest.raises(DataError):
            decode_pnm(blob)


def _write_tree(root, counts):
    for split, per_class in counts.items():
        for cls, n in per_class.items():
            d = root / split / cls
            d.mkdir(parents=True)
            for i in range(n):
                (d / f"{cls}_{i}.ppm").write_bytes(encode_pnm(np.full((3, 2, 2), i / 4)))


class TestScan:
    def test_order_and_labels(self, tmp_path):
        _write_tree(tmp_path, {"train": {"real": 2, "fake": 2}})
        m = scan_directory(tmp_path)["train"]
        assert [lab for _, lab in m.entries] == [0, 0, 1, 1]
        paths = [p for p, _ in m.entries]
        assert paths[:2] == sorted(paths[:2]) and paths[2:] == sorted(paths[2:])

    def test_missing_class(self, tmp_path):
        (tmp_path / "train" / "real").mkdir(parents=True)
        (tmp_path / "train" / "real" / "a.ppm").write_bytes(encode_pnm(np.zeros((3, 1, 1))))
        with pytest.raises(DataError):
            scan_directory(tmp_path)

    def test_empty_class(self, tmp_path):
        _write_tree(tmp_path, {"train": {"real": 1, "fake": 0}})
        with pytest.raises(DataError):
            scan_directory(tmp_path)

    def test_empty_root(self, tmp_path):
        with pytest.raises(DataError):
            scan_directory(tmp_path)
        with pytest.raises(DataError):
            scan_directory(tmp_path / "absent")

    def test_repeat_scans_identical(self, tmp_path):
        _write_tree(tmp_path, {"train": {"real": 30, "fake": 25}, "test": {"real": 3, "fake": 3}})
        a = scan_directory(tmp_path)
        b = scan_directory(tmp_path)
        assert {k: v.entries for k, v in a.items()} == {k: v.entries for k, v in b.items()}

    def test_load_samples(self, tmp_path):
        _write_tree(tmp_path, {"val": {"real": 1, "fake": 1}})
        s = load_samples(scan_directory(tmp_path)["val"], tmp_path)
        assert [x.label for x in s] == [0, 1]
        assert s[0].id == "val/real/real_0.ppm" and s[0].image.shape == (3, 2, 2)


class TestSynthetic:
    def test_n1_two_files(self, tmp_path):
        generate_synthetic(tmp_path, 1, 32, seed=1)
        files = sorted(p.relative_to(tmp_path).as_posix() for p in tmp_path.rglob("*.ppm"))
        assert files == ["train/fake/fake_00000.ppm", "train/real/real_00000.ppm"]

    def test_byte_identical_replay(self, tmp_path):
        generate_synthetic(tmp_path / "a", 6, 32, seed=9)
        generate_synthetic(tmp_path / "b", 6, 32, seed=9)
        fa = sorted((tmp_path / "a").rglob("*.ppm"))
        fb = sorted((tmp_path / "b").rglob("*.ppm"))
        assert [p.read_bytes() for p in fa] == [p.read_bytes() for p in fb]
        meta = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert meta["seed"] == 9 and meta["params"]["grid_amplitude"] == 0.08

    def test_splits_disjoint(self, tmp_path):
        m = generate_synthetic(tmp_path, 20, 32, seed=2)
        seen = [p for man in m.values() for p, _ in man.entries]
        assert len(seen) == len(set(seen)) == 40
        assert {k: len(v.entries) for k, v in m.items()} == {"train": 28, "val": 6, "test": 6}
        rescanned = scan_directory(tmp_path)
        assert {k: v.entries for k, v in rescanned.items()} == {k: v.entries for k, v in m.items()}

    def test_images_in_unit_range(self, rng):
        for fake in (False, True):
            img = synth_image(32, fake, rng)
            assert img.shape == (3, 32, 32) and img.min() == 0.0 and img.max() == 1.0

    def test_fake_band_energy_exceeds_real(self):
        real, fake = [], []
        for i in range(100):
            real.append(high_band_energy(to_grayscale(synth_image(64, False, np.random.default_rng([3, 0, i])))))
            fake.append(high_band_energy(to_grayscale(synth_image(64, True, np.random.default_rng([3, 1, i])))))
        assert np.mean(fake) - np.mean(real) > 0

    def test_band_threshold_separates(self):
        real = [high_band_energy(to_grayscale(synth_image(64, False, np.random.default_rng([4, 0, i]))))
                for i in range(100)]
        fake = [high_band_energy(to_grayscale(synth_image(64, True, np.random.default_rng([4, 1, i]))))
                for i in range(100)]
        scores = np.r_[real, fake]
        truth = np.r_[np.zeros(100), np.ones(100)]
        best = max(np.mean((scores >= t) == truth) for t in scores)
        assert best >= 0.9
