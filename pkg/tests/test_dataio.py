import numpy as np
import pytest
from PIL import Image

from ccdf.dataio import (
    CHANGED,
    UNCHANGED,
    UNDEFINED,
    ChangeRegion,
    ImageTensor,
    ReferenceMap,
    SyntheticSpec,
    load_change_map,
    load_raster,
    load_reference_map,
    make_synthetic_pair,
    save_change_map,
    save_raster,
    save_reference_map,
)


def test_image_tensor_properties():
    img = ImageTensor(np.zeros((10, 20, 4), dtype=np.float32))
    assert (img.width, img.height, img.channels) == (20, 10, 4)


def test_image_tensor_rejects_nan():
    data = np.zeros((2, 2, 1))
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ImageTensor(data)


def test_raster_roundtrip_tiff(tmp_path):
    rng = np.random.default_rng(1)
    img = ImageTensor(rng.normal(size=(11, 13, 4)).astype(np.float32))
    path = tmp_path / "img.tif"
    save_raster(img, path)
    back = load_raster(path)
    assert np.array_equal(back.data, img.data)


def test_raster_roundtrip_raw(tmp_path):
    rng = np.random.default_rng(2)
    img = ImageTensor(rng.normal(size=(7, 5, 3)).astype(np.float32))
    path = tmp_path / "img.raw"
    save_raster(img, path)
    back = load_raster(path)
    assert np.array_equal(back.data, img.data)


def test_load_raster_single_value(tmp_path):
    path = tmp_path / "one.raw"
    save_raster(ImageTensor(np.array([[[7.0]]], dtype=np.float32)), path)
    back = load_raster(path)
    assert back.data.shape == (1, 1, 1)
    assert back.data[0, 0, 0] == 7.0


def test_load_raster_full_scene_dimensions(tmp_path):
    img = ImageTensor(np.zeros((1000, 1000, 4), dtype=np.float32))
    path = tmp_path / "scene.tif"
    save_raster(img, path)
    back = load_raster(path)
    assert (back.width, back.height, back.channels) == (1000, 1000, 4)


def test_reference_map_dataset_scale_counts(tmp_path):
    # full-scene color map with a known changed-pixel census
    rgb = np.zeros((1000, 1000, 3), dtype=np.uint8)
    rgb[:] = (128, 128, 128)
    flat = rgb.reshape(-1, 3)
    flat[:20026] = (255, 0, 0)
    flat[20026:20026 + 484143] = (0, 255, 0)
    path = tmp_path / "census.png"
    Image.fromarray(rgb).save(path)
    ref = load_reference_map(path, encoding="color")
    assert ref.count(CHANGED) == 20026
    assert ref.count(UNCHANGED) == 484143
    assert ref.count(UNDEFINED) == 1000 * 1000 - 20026 - 484143


def test_load_raster_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_raster(tmp_path / "absent.tif")


def test_load_raster_mismatched_bands(tmp_path):
    a = Image.fromarray(np.zeros((100, 100), dtype=np.float32), mode="F")
    b = Image.fromarray(np.zeros((99, 100), dtype=np.float32), mode="F")
    path = tmp_path / "bad.tif"
    a.save(path, save_all=True, append_images=[b])
    with pytest.raises(ValueError, match="mismatched"):
        load_raster(path)


def test_load_raster_garbage(tmp_path):
    path = tmp_path / "junk.tif"
    path.write_bytes(b"this is not a raster")
    with pytest.raises(ValueError):
        load_raster(path)


def test_reference_map_color_coding(tmp_path):
    rgb = np.zeros((3, 4, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)   # changed
    rgb[1, 1] = (0, 255, 0)   # unchanged
    rgb[2, 2] = (0, 0, 255)   # outside the coding
    path = tmp_path / "ref.png"
    Image.fromarray(rgb).save(path)
    ref = load_reference_map(path, encoding="color")
    assert ref.labels[0, 0] == CHANGED
    assert ref.labels[1, 1] == UNCHANGED
    assert ref.labels[2, 2] == UNDEFINED
    assert ref.count(CHANGED) == 1
    assert ref.count(UNCHANGED) == 1


def test_reference_map_all_green(tmp_path):
    rgb = np.zeros((5, 5, 3), dtype=np.uint8)
    rgb[:] = (0, 255, 0)
    path = tmp_path / "green.png"
    Image.fromarray(rgb).save(path)
    ref = load_reference_map(path, encoding="color")
    assert ref.count(UNCHANGED) == 25
    assert ref.count(CHANGED) == 0


def test_reference_map_integer_coding(tmp_path):
    labels = np.array([[1, 0], [255, 7]], dtype=np.uint8)
    path = tmp_path / "ref.png"
    Image.fromarray(labels, mode="L").save(path)
    ref = load_reference_map(path, encoding="integer")
    assert ref.labels[0, 0] == CHANGED
    assert ref.labels[0, 1] == UNCHANGED
    assert ref.labels[1, 0] == UNDEFINED
    assert ref.labels[1, 1] == UNDEFINED  # outside the coding


def test_reference_map_roundtrip_both_encodings(tmp_path):
    labels = np.array([[CHANGED, UNCHANGED], [UNDEFINED, CHANGED]], dtype=np.uint8)
    ref = ReferenceMap(labels)
    for encoding in ("color", "integer"):
        path = tmp_path / f"ref_{encoding}.png"
        save_reference_map(ref, path, encoding=encoding)
        back = load_reference_map(path, encoding=encoding)
        assert np.array_equal(back.labels, labels)


def test_change_map_binary_roundtrip_exact(tmp_path):
    mask = np.ones((6, 6), dtype=np.float32)
    path = tmp_path / "ones.png"
    save_change_map(mask, path)
    back = load_change_map(path)
    assert np.array_equal(back, mask)


def test_change_map_probability_quantum(tmp_path):
    rng = np.random.default_rng(3)
    mask = rng.uniform(size=(16, 16)).astype(np.float32)
    path = tmp_path / "prob.png"
    save_change_map(mask, path)
    back = load_change_map(path)
    assert np.abs(back - mask).max() <= 1.0 / 255.0


def test_change_map_float_tiff_exact(tmp_path):
    rng = np.random.default_rng(4)
    mask = rng.uniform(size=(9, 9)).astype(np.float32)
    path = tmp_path / "prob.tif"
    save_change_map(mask, path)
    assert np.array_equal(load_change_map(path), mask)


def test_change_map_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        save_change_map(np.zeros((0, 0)), tmp_path / "empty.png")


def test_change_map_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        save_change_map(np.full((2, 2), 1.5), tmp_path / "bad.png")


def test_synthetic_identity_pair():
    spec = SyntheticSpec(size=(32, 24, 3), style_gain=(1.0,), style_bias=(0.0,),
                         noise_sigma=0.0, rng_seed=9)
    t1, t2, ref = make_synthetic_pair(spec)
    assert np.array_equal(t1.data, t2.data)
    assert ref.count(UNCHANGED) == 32 * 24


def test_synthetic_change_region_area():
    spec = SyntheticSpec(size=(96, 96, 4), change_regions=(ChangeRegion(10, 20, 48, 48),),
                         rng_seed=1)
    _, _, ref = make_synthetic_pair(spec)
    assert ref.count(CHANGED) == 2304


def test_synthetic_deterministic():
    spec = SyntheticSpec(size=(40, 40, 2), style_gain=(1.1, 0.9), style_bias=(0.2, -0.1),
                         noise_sigma=0.05, change_regions=(ChangeRegion(4, 4, 8, 8),),
                         rng_seed=123)
    a1, a2, aref = make_synthetic_pair(spec)
    b1, b2, bref = make_synthetic_pair(spec)
    assert np.array_equal(a1.data, b1.data)
    assert np.array_equal(a2.data, b2.data)
    assert np.array_equal(aref.labels, bref.labels)


def test_synthetic_style_exact_outside_regions():
    spec = SyntheticSpec(size=(50, 30, 4), style_gain=(1.2, 0.9, 1.1, 0.8),
                         style_bias=(0.3, -0.2, 0.1, 0.4), noise_sigma=0.0,
                         change_regions=(ChangeRegion(5, 6, 10, 10),), rng_seed=5)
    t1, t2, ref = make_synthetic_pair(spec)
    outside = ref.labels == UNCHANGED
    styled = t1.data * np.float32(1.0)  # copy
    for c, (gain, bias) in enumerate(zip(spec.style_gain, spec.style_bias)):
        styled[:, :, c] = t1.data[:, :, c] * np.float32(gain) + np.float32(bias)
    assert np.array_equal(t2.data[outside], styled[outside])


def test_synthetic_rejects_out_of_bounds_region():
    with pytest.raises(ValueError, match="bounds"):
        SyntheticSpec(size=(20, 20, 1), change_regions=(ChangeRegion(15, 15, 10, 10),))


def test_synthetic_rejects_overlapping_regions():
    with pytest.raises(ValueError, match="overlap"):
        SyntheticSpec(size=(40, 40, 1),
                      change_regions=(ChangeRegion(0, 0, 10, 10), ChangeRegion(5, 5, 10, 10)))
