import numpy as np
import pytest
from PIL import Image

from sketchrender.dataset import (
    ManifestEntry,
    bilinear_resize,
    load_dataset,
    make_toy_corpus,
    read_manifest,
    to_signed,
    to_uint8,
    write_png,
)
from sketchrender.sketch import SketchParams, extract_sketch


def test_bilinear_2x2_to_1x1_is_the_mean():
    img = np.array([[0.0, 10.0], [20.0, 50.0]])
    assert bilinear_resize(img, 1, 1)[0, 0] == 20.0


def test_bilinear_upsample_by_hand():
    # half-pixel centres: outputs sit at 0.25 and 0.75 of the input span, edges clamp
    out = bilinear_resize(np.array([[0.0, 4.0]]), 1, 4)
    np.testing.assert_allclose(out[0], [0.0, 1.0, 3.0, 4.0])


def _write_three(tmp_path, size=128):
    rng = np.random.default_rng(0)
    for name in ("b.png", "a.png", "c.png"):
        write_png(tmp_path / name, rng.integers(0, 256, (size, size, 3), dtype=np.uint8))


def test_load_three_pngs_resized(tmp_path):
    _write_three(tmp_path)
    ds = load_dataset(tmp_path, resolution=64)
    assert len(ds) == 3 and ds.images.shape == (3, 3, 64, 64)
    assert ds.images.min() >= -1 and ds.images.max() <= 1
    assert [e.image for e in ds.entries] == ["a.png", "b.png", "c.png"]
    again = load_dataset(tmp_path, resolution=64)
    assert again.entries == ds.entries
    np.testing.assert_array_equal(again.images, ds.images)


def test_grayscale_is_replicated(tmp_path):
    Image.fromarray(np.full((8, 8), 200, np.uint8)).save(tmp_path / "g.png")
    ds = load_dataset(tmp_path, resolution=8)
    np.testing.assert_array_equal(ds.images[0, 0], ds.images[0, 2])


def test_empty_directory_errors(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")


def test_undecodable_file_reported_or_skipped(tmp_path):
    _write_three(tmp_path, 16)
    (tmp_path / "broken.png").write_bytes(b"not a png")
    with pytest.raises(ValueError, match="broken.png"):
        load_dataset(tmp_path, resolution=16)
    ds = load_dataset(tmp_path, resolution=16, skip_undecodable=True)
    assert len(ds) == 3 and ds.skipped == ["broken.png"]


def test_preprocessing_is_idempotent(tmp_path):
    _write_three(tmp_path)
    first = load_dataset(tmp_path, resolution=32)
    out = tmp_path / "resized"
    for e, img in zip(first.entries, first.images):
        write_png(out / e.image, to_uint8(img))
    second = load_dataset(out, resolution=32)
    assert np.abs(second.images - first.images).max() <= 1 / 255 + 1e-6


def test_signed_uint8_round_trip():
    u = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(to_uint8(to_signed(u)), u)


def test_manifest_line_format():
    e = ManifestEntry.from_line("img.png\t\tmask.png")
    assert e == ManifestEntry("img.png", "", "mask.png")
    assert ManifestEntry.from_line("only.png") == ManifestEntry("only.png")


def test_toy_corpus_is_byte_exact(tmp_path):
    a = make_toy_corpus(200, 64, seed=7, out_dir=tmp_path / "a")
    b = make_toy_corpus(200, 64, seed=7, out_dir=tmp_path / "b")
    assert len(a) == 200 and a.images.shape == (200, 3, 64, 64) and a.masks.shape == (200, 64, 64)
    np.testing.assert_array_equal(a.images, b.images)
    for sub in ("manifest.tsv", "images/00000.png", "images/00199.png", "masks/00123.png"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
    assert len(read_manifest(tmp_path / "a" / "manifest.tsv")) == 200
    assert set(np.unique(a.masks)) == {0, 1}
    assert not np.array_equal(make_toy_corpus(3, 64, seed=8).images, a.images[:3])


def test_toy_corpus_reloads_with_masks(tmp_path):
    made = make_toy_corpus(5, 32, seed=1, out_dir=tmp_path)
    ds = load_dataset(tmp_path, resolution=32)
    np.testing.assert_array_equal(ds.images, made.images)
    np.testing.assert_array_equal(ds.masks, made.masks)


def test_toy_corpus_rejects_nonpositive():
    with pytest.raises(ValueError):
        make_toy_corpus(0)


def test_extraction_recovers_toy_masks():
    ds = make_toy_corpus(20, 64, seed=7)
    params = SketchParams()
    r = params.radius
    fractions = []
    for img, mask in zip(ds.images, ds.masks):
        sk = extract_sketch(img, params).mask
        near = np.pad(sk, r)
        h, w = sk.shape
        reach = np.zeros_like(sk, dtype=bool)
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                reach |= near[r + dy : r + dy + h, r + dx : r + dx + w].astype(bool)
        fractions.append(reach[mask == 1].mean())
    assert np.mean(fractions) >= 0.8
