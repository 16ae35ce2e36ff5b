import json

import pytest
import torch
from PIL import Image

from rsformer.dataset import (
    DatasetManifest,
    augment,
    build_manifest,
    dihedral,
    load_image,
    load_manifest,
    sample_patch,
    save_image,
    synthetic_pairs,
    write_pairs,
)
from rsformer.errors import ContractError, ManifestError
from rsformer.synthesis import ImagePair


def quantize(x):
    return (x.clamp(0, 1) * 255).round() / 255


def test_image_round_trip_is_8bit(tmp_path):
    x = torch.rand(1, 3, 7, 5)
    save_image(x, tmp_path / "a.png")
    y = load_image(tmp_path / "a.png")
    assert y.shape == (1, 3, 7, 5) and y.dtype == torch.float32
    assert torch.allclose(y, quantize(x), atol=1e-6)


def test_save_rejects_batches(tmp_path):
    with pytest.raises(ContractError):
        save_image(torch.rand(2, 3, 4, 4), tmp_path / "a.png")


def test_write_and_load_manifest(tmp_path):
    pairs = synthetic_pairs(3, 32, 24, seed=1)
    manifest = write_pairs(tmp_path, pairs, split="val")
    data = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert data["split"] == "val"
    assert data["entries"][0] == {"degraded": "degraded/0000.png", "clean": "clean/0000.png"}
    loaded = load_manifest(tmp_path)
    assert len(loaded) == len(manifest) == 3
    pair = loaded.load_pair(2)
    assert torch.allclose(pair.clean, quantize(pairs[2].clean), atol=1e-6)
    assert pair.name == "0002"


def test_build_manifest_keeps_existing_split(tmp_path):
    write_pairs(tmp_path, synthetic_pairs(2, 16, 16), split="test")
    assert build_manifest(tmp_path).split == "test"


def test_unpaired_files_reported_together(tmp_path):
    write_pairs(tmp_path, synthetic_pairs(2, 16, 16))
    (tmp_path / "clean" / "0001.png").unlink()
    save_image(torch.rand(1, 3, 16, 16), tmp_path / "clean" / "0009.png")
    with pytest.raises(ManifestError) as err:
        build_manifest(tmp_path)
    assert "degraded/0001.png" in str(err.value) and "clean/0009.png" in str(err.value)
    assert len(err.value.offenders) == 2


def test_missing_and_mismatched_entries(tmp_path):
    write_pairs(tmp_path, synthetic_pairs(2, 16, 16))
    save_image(torch.rand(1, 3, 16, 12), tmp_path / "clean" / "0000.png")
    (tmp_path / "degraded" / "0001.png").unlink()
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path)
    text = str(err.value)
    assert "size mismatch" in text and "degraded/0001.png (missing)" in text
    # size checks can be relaxed, missing files cannot
    with pytest.raises(ManifestError, match="missing"):
        load_manifest(tmp_path, check_sizes=False)


def test_undecodable_file(tmp_path):
    write_pairs(tmp_path, synthetic_pairs(1, 16, 16))
    (tmp_path / "clean" / "0000.png").write_bytes(b"not a png")
    with pytest.raises(ManifestError, match="undecodable"):
        load_manifest(tmp_path)


def test_malformed_or_absent_manifest(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{\"entries\": 3}", encoding="utf-8")
    with pytest.raises(ManifestError, match="malformed"):
        load_manifest(tmp_path)


def test_missing_directories(tmp_path):
    with pytest.raises(ManifestError, match="degraded/ and clean/"):
        build_manifest(tmp_path)


def test_grayscale_png_loads_as_rgb(tmp_path):
    Image.new("L", (6, 4), 128).save(tmp_path / "g.png")
    x = load_image(tmp_path / "g.png")
    assert x.shape == (1, 3, 4, 6)


class TestPatches:
    def _pair(self):
        clean = torch.arange(3 * 10 * 12, dtype=torch.float32).view(1, 3, 10, 12)
        return ImagePair(clean + 1000, clean)

    def test_crop_is_aligned(self):
        pair = self._pair()
        for seed in range(10):
            p = sample_patch(pair, 4, seed)
            assert p.clean.shape == (1, 3, 4, 4)
            assert torch.equal(p.degraded - 1000, p.clean)

    def test_crop_is_seeded(self):
        pair = self._pair()
        assert torch.equal(sample_patch(pair, 4, 3).clean, sample_patch(pair, 4, 3).clean)

    def test_crop_too_large(self):
        with pytest.raises(ContractError):
            sample_patch(self._pair(), 11)

    def test_augment_applies_same_transform(self):
        pair = ImagePair(torch.rand(1, 3, 6, 6) + 5, torch.rand(1, 3, 6, 6))
        for seed in range(16):
            out = augment(pair, seed)
            k = [torch.equal(dihedral(pair.clean, j), out.clean) for j in range(8)].index(True)
            assert torch.equal(dihedral(pair.degraded, k), out.degraded)

    def test_dihedral_group_has_eight_distinct_elements(self):
        x = torch.arange(9.0).view(1, 1, 3, 3)
        images = [dihedral(x, k) for k in range(8)]
        assert len({tuple(im.flatten().tolist()) for im in images}) == 8


def test_synthetic_pairs_deterministic():
    a, b = synthetic_pairs(2, 24, 24, seed=3), synthetic_pairs(2, 24, 24, seed=3)
    for pa, pb in zip(a, b):
        assert torch.equal(pa.degraded, pb.degraded) and torch.equal(pa.clean, pb.clean)
    assert not torch.equal(a[0].degraded, a[0].clean)


def test_manifest_paths(tmp_path):
    m = DatasetManifest(tmp_path, [("degraded/a.png", "clean/a.png")])
    assert m.paths(0) == (tmp_path / "degraded/a.png", tmp_path / "clean/a.png")
