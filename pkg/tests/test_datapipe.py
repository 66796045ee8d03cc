import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from procan.curriculum import partition
from procan.datapipe import (
    ANGLES,
    AXES,
    INDEX_HEADER,
    CtVolume,
    NoduleRecord,
    augment,
    augment_one,
    clamp_hu,
    crop_cube,
    gen_synthetic,
    load_dataset,
    preprocess,
    read_volume,
    resample_isotropic,
    rotate,
    rotate90,
    standardize,
    write_dataset,
    write_volume,
)
from procan.datapipe.augment import rotate_interp
from procan.errors import ConfigurationError, DataError, DimensionError


# -- clamp and standardize -----------------------------------------------------------
def test_clamp_examples():
    assert np.array_equal(clamp_hu([-2000.0, 500.0, 37.0]), [-1000.0, 400.0, 37.0])


@given(arrays(np.float64, 10, elements=st.floats(-5000, 5000)))
def test_clamp_is_idempotent(x):
    assert np.array_equal(clamp_hu(clamp_hu(x)), clamp_hu(x))


def test_standardize_examples(rng):
    assert np.array_equal(standardize(np.full((4, 4, 4), 3.0)), np.zeros((4, 4, 4)))
    two = np.array([-1.0, 1.0] * 4).reshape(2, 2, 2)
    assert np.array_equal(standardize(two), two)
    out = standardize(rng.normal(5.0, 3.0, (6, 6, 6)))
    assert abs(out.mean()) < 1e-10 and abs(out.std() - 1) < 1e-10


@given(arrays(np.float64, (3, 3, 3), elements=st.floats(-1000, 400)))
def test_standardize_is_idempotent(x):
    once = standardize(x)
    assert np.max(np.abs(standardize(once) - once)) < 1e-10


# -- resampling ----------------------------------------------------------------------
def test_resample_identity(rng):
    v = rng.normal(size=(5, 6, 7))
    out = resample_isotropic(CtVolume(v, (1.0, 1.0, 1.0)), 1.0)
    assert out.spacing == (1.0, 1.0, 1.0) and np.array_equal(out.voxels, v)


@pytest.mark.parametrize("spacing,target", [((2.5, 0.7, 1.3), 1.0), ((1.0, 1.0, 1.0), 0.37), ((3.0, 2.0, 0.5), 1.7)])
def test_linear_ramp_stays_linear(spacing, target):
    shape = (6, 7, 8)
    zz, yy, xx = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    ramp = 2.0 * xx * spacing[2] - 0.5 * zz * spacing[0] + 3.0 * yy * spacing[1]
    out = resample_isotropic(CtVolume(ramp, spacing), target).voxels
    oz, oy, ox = np.meshgrid(*(np.arange(n) * target for n in out.shape), indexing="ij")
    assert np.max(np.abs(out - (2.0 * ox - 0.5 * oz + 3.0 * oy))) < 1e-10


def trilinear_loop(vol, z, y, x):
    d, h, w = vol.shape
    z0, y0, x0 = int(math.floor(z)), int(math.floor(y)), int(math.floor(x))
    total = 0.0
    for dz, dy, dx in itertools.product((0, 1), repeat=3):
        zi, yi, xi = z0 + dz, y0 + dy, x0 + dx
        wgt = (1 - abs(z - zi)) * (1 - abs(y - yi)) * (1 - abs(x - xi))
        if wgt == 0:
            continue
        total += wgt * vol[zi, yi, xi]
    return total


def test_upsample_matches_loop_oracle(rng):
    v = rng.normal(size=(4, 4, 4))
    out = resample_isotropic(CtVolume(v, (2.0, 2.0, 2.0)), 1.0).voxels
    assert out.shape == (7, 7, 7)
    for i, j, k in itertools.product(range(7), repeat=3):
        assert abs(out[i, j, k] - trilinear_loop(v, i / 2, j / 2, k / 2)) < 1e-10


def test_resample_rejects_bad_target(rng):
    with pytest.raises(DataError):
        resample_isotropic(CtVolume(rng.normal(size=(2, 2, 2)), (1, 1, 1)), 0.0)
    with pytest.raises(DataError):
        CtVolume(rng.normal(size=(2, 2, 2)), (1, 0, 1))


# -- cropping ------------------------------------------------------------------------
def crop_oracle(data, center_mm, spacing, size):
    c = [int(math.floor(v / spacing + 0.5)) for v in center_mm]
    out = np.empty((size,) * 3)
    for i, j, k in itertools.product(range(size), repeat=3):
        z, y, x = c[0] - size // 2 + i, c[1] - size // 2 + j, c[2] - size // 2 + k
        inside = 0 <= z < data.shape[0] and 0 <= y < data.shape[1] and 0 <= x < data.shape[2]
        out[i, j, k] = data[z, y, x] if inside else -1000.0
    return out


def test_interior_crop(rng):
    data = rng.normal(size=(64, 64, 64))
    out = crop_cube(CtVolume(data, (1, 1, 1)), (32.0, 32.0, 32.0), 32)
    assert np.array_equal(out, data[16:48, 16:48, 16:48])


def test_corner_crop_pads_with_air(rng):
    data = rng.normal(size=(20, 20, 20))
    out = crop_cube(CtVolume(data, (1, 1, 1)), (0.0, 0.0, 0.0), 8)
    assert np.all(out[:4] == -1000.0) and np.all(out[:, :4] == -1000.0) and np.all(out[:, :, :4] == -1000.0)
    assert np.array_equal(out[4:, 4:, 4:], data[:4, :4, :4])


def test_crop_matches_index_oracle(rng):
    data = rng.normal(size=(18, 15, 21))
    vol = CtVolume(data, (1.5, 1.5, 1.5))
    for _ in range(20):
        center = rng.uniform(0, [17 * 1.5, 14 * 1.5, 20 * 1.5])
        assert np.array_equal(crop_cube(vol, center, 12), crop_oracle(data, center, 1.5, 12))


def test_crop_errors(rng):
    vol = CtVolume(rng.normal(size=(8, 8, 8)), (1, 1, 1))
    with pytest.raises(DataError):
        crop_cube(vol, (20.0, 2.0, 2.0), 4)
    with pytest.raises(DataError):
        crop_cube(CtVolume(rng.normal(size=(8, 8, 8)), (2, 1, 1)), (2.0, 2.0, 2.0), 4)


def test_preprocess_order_and_air_fill(rng):
    data = rng.uniform(-1500, 900, size=(10, 12, 12))
    vol = CtVolume(data, (1.0, 1.0, 1.0))
    cube, fill = preprocess(vol, (1.0, 6.0, 6.0), 8, 1.0)
    ref = clamp_hu(crop_cube(resample_isotropic(vol, 1.0), (1.0, 6.0, 6.0), 8))
    assert np.allclose(cube, standardize(ref), rtol=0, atol=1e-12)
    assert abs(fill - (-1000.0 - ref.mean()) / ref.std()) < 1e-12
    assert cube.min() == pytest.approx(fill)


# -- augmentation --------------------------------------------------------------------
cube_strategy = arrays(np.float64, (5, 5, 5), elements=st.floats(-3, 3))


def test_augment_count_and_identities(rng):
    cube = rng.normal(size=(6, 6, 6))
    views = augment(cube, fill=-2.0)
    assert len(views) == 21
    for i in range(3):
        assert np.array_equal(views[i * 7], cube)
    assert len(augment(cube, dedupe=True)) == 19


@given(cube_strategy)
def test_augment_always_21(cube):
    assert len(augment(cube)) == 21


@given(cube_strategy, st.sampled_from(AXES))
def test_quarter_turn_group(cube, axis):
    r = cube
    for _ in range(4):
        r = rotate90(r, axis)
    assert np.array_equal(r, cube)
    assert np.array_equal(rotate(cube, axis, 180), rotate90(rotate90(cube, axis), axis))
    for k in (1, 2, 3):
        assert np.array_equal(np.sort(rotate90(cube, axis, k), axis=None), np.sort(cube, axis=None))


@pytest.mark.parametrize("axis", AXES)
@pytest.mark.parametrize("angle", [90, 180, 270])
def test_interpolated_quarter_turn_agrees_with_exact(rng, axis, angle):
    cube = rng.normal(size=(7, 7, 7))
    assert np.allclose(rotate_interp(cube, axis, angle), rotate90(cube, axis, angle // 90), rtol=0, atol=1e-12)


def test_rotation_axis_leaves_its_coordinate(rng):
    cube = rng.normal(size=(5, 5, 5))
    out = rotate(cube, "z", 45, fill=0.0)
    # a constant along z stays constant along z
    slab = np.broadcast_to(rng.normal(size=(1, 5, 5)), (5, 5, 5))
    rs = rotate(slab, "z", 45, fill=0.0)
    assert np.allclose(rs, rs[0:1], rtol=0, atol=1e-15)
    assert out.shape == cube.shape


def test_oblique_rotation_fills_corners(rng):
    cube = rng.normal(size=(8, 8, 8))
    out = rotate(cube, "x", 45, fill=-9.0)
    assert np.all(out[0, 0, :] == -9.0) and np.all(out[7, 7, :] == -9.0)
    assert np.allclose(out[3:5, 3:5, :], rotate_interp(cube, "x", 45, -9.0)[3:5, 3:5, :])


def test_augment_one_matches_full_list(rng):
    cube = rng.normal(size=(6, 6, 6))
    views = augment(cube, fill=-1.5)
    for i in range(21):
        assert np.array_equal(augment_one(cube, i, fill=-1.5), views[i])
    with pytest.raises(DimensionError):
        augment_one(cube, 21)


def test_augment_order_is_axis_major():
    assert len(ANGLES) == 7 and ANGLES[0] == 0
    cube = np.arange(125.0).reshape(5, 5, 5)
    views = augment(cube)
    assert np.array_equal(views[2], rotate90(cube, "z"))
    assert np.array_equal(views[9], rotate90(cube, "y"))
    assert np.array_equal(views[20], rotate90(cube, "x", 3))


def test_non_cubic_is_dimension_error(rng):
    with pytest.raises(DimensionError):
        augment(rng.normal(size=(4, 4, 5)))
    with pytest.raises(DimensionError):
        rotate(rng.normal(size=(4, 4, 4)), "w", 90)


# -- records and files ---------------------------------------------------------------
def tiny_volume(rng):
    return CtVolume(rng.integers(-1000, 400, size=(6, 7, 8)).astype(float), (2.5, 0.75, 0.75))


def test_volume_round_trip(rng, tmp_path):
    vol = tiny_volume(rng)
    write_volume(tmp_path / "v.vol", vol)
    back = read_volume(tmp_path / "v.vol")
    assert back.spacing == vol.spacing and np.array_equal(back.voxels, vol.voxels)
    raw = (tmp_path / "v.vol").read_bytes()
    assert raw.startswith(b"PROCANVOL 1\ndims 6 7 8\n")
    assert len(raw.split(b"end\n", 1)[1]) == 6 * 7 * 8 * 2


def test_volume_file_errors(tmp_path):
    (tmp_path / "a.vol").write_bytes(b"NOPE\nend\n")
    with pytest.raises(DataError):
        read_volume(tmp_path / "a.vol")
    (tmp_path / "b.vol").write_bytes(b"PROCANVOL 1\ndims 2 2 2\nspacing 1 1 1\ntype int16le\nend\n\x00\x00")
    with pytest.raises(DataError):
        read_volume(tmp_path / "b.vol")


def write_index(path, rows):
    path.write_text(",".join(INDEX_HEADER) + "\n" + "".join(r + "\n" for r in rows))


def test_rating_three_is_excluded(rng, tmp_path):
    write_volume(tmp_path / "a.vol", tiny_volume(rng))
    write_index(tmp_path / "index.csv", ["n1,a.vol,5,5,5,8.0,3,benign"])
    assert load_dataset(tmp_path / "index.csv") == []
    assert load_dataset.last_excluded == 1


def test_labels_preserved(rng, tmp_path):
    write_volume(tmp_path / "a.vol", tiny_volume(rng))
    write_index(tmp_path / "index.csv", ["n1,a.vol,5,5,5,8.0,1,benign", "n2,a.vol,5,5,5,14.0,,malignant"])
    recs = load_dataset(tmp_path / "index.csv")
    assert [(r.id, r.label, r.median_rating, r.y) for r in recs] == [("n1", "benign", 1, 0), ("n2", "malignant", None, 1)]


@pytest.mark.parametrize(
    "row,needle",
    [
        ("n1,a.vol,5,5,x,8.0,1,benign", "row 2"),
        ("n1,a.vol,5,5,5,31.0,1,benign", "row 2"),
        ("n1,a.vol,5,5,5,8.0,5,benign", "row 2"),
        ("n1,a.vol,5,5,5,8.0,1", "row 2"),
        ("n9,missing.vol,5,5,5,8.0,1,benign", "n9"),
    ],
)
def test_index_errors(rng, tmp_path, row, needle):
    write_volume(tmp_path / "a.vol", tiny_volume(rng))
    write_index(tmp_path / "index.csv", [row])
    with pytest.raises(DataError, match=needle):
        load_dataset(tmp_path / "index.csv")


def test_bad_header(tmp_path):
    (tmp_path / "index.csv").write_text("id,file\n")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "index.csv")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "absent.csv")


def test_dataset_round_trip(tmp_path):
    recs = gen_synthetic(20, seed=3)
    index = write_dataset(recs, tmp_path)
    back = load_dataset(index)
    assert back == [r for r in recs if r.median_rating != 3]
    for a, b in zip(recs, back):
        assert np.array_equal(np.rint(a.volume.voxels), b.volume.voxels)


def test_record_validation():
    with pytest.raises(DataError):
        NoduleRecord("x", "v", (0, 0, 0), 0.0, None, "benign")
    with pytest.raises(DataError):
        NoduleRecord("x", "v", (0, 0, 0), 5.0, 2, "malignant")
    with pytest.raises(DataError):
        NoduleRecord("x", "v", (0, 0, 0), 5.0, None, "unknown")


# -- synthetic generator -------------------------------------------------------------
@pytest.fixture(scope="module")
def synth500():
    return gen_synthetic(500, seed=0, size=16)


def test_generator_is_deterministic():
    a, b = gen_synthetic(25, seed=9), gen_synthetic(25, seed=9)
    assert a == b
    assert all(np.array_equal(x.volume.voxels, y.volume.voxels) for x, y in zip(a, b))
    assert gen_synthetic(25, seed=10) != a


def test_generator_balance(synth500):
    frac = np.mean([r.y for r in synth500])
    assert frac == pytest.approx(0.464)
    assert 0.4 <= frac <= 0.6


def test_generator_diameter_partition(synth500):
    easy, full = partition(synth500, "diameter")
    assert (len(easy), len(full) - len(easy)) == (325, 175)
    assert all(3.0 <= r.diameter_mm <= 30.0 for r in synth500)


def test_generator_records_are_consistent(synth500):
    assert all(r.median_rating in (1, 2, 4, 5) for r in synth500)
    assert all(r.volume.spacing == (2.5, 2.0, 2.0) for r in synth500[:5])
    cube, fill = preprocess(synth500[0].volume, synth500[0].center_mm, 16, 2.0)
    assert cube.shape == (16, 16, 16) and fill < cube.mean()


def test_generator_errors():
    with pytest.raises(ConfigurationError):
        gen_synthetic(19)
    with pytest.raises(ConfigurationError):
        gen_synthetic(50, size=24)
