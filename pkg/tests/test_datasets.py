import numpy as np
import pytest
from scipy import stats

from zae.datasets import (
    LabeledImageSet,
    crop_center_patches,
    gen_rotating_dots,
    load_cifar10,
    render_dots,
    rotate_points,
    rotate_images,
    sample_random_patches,
)
from zae.errors import DataFormatError, DimensionError


def cifar_record(label, pixels):
    return bytes([label]) + np.asarray(pixels, dtype=np.uint8).tobytes()


@pytest.fixture
def two_records(tmp_path):
    a = np.arange(3072) % 256
    b = np.full(3072, 255)
    path = tmp_path / "batch.bin"
    path.write_bytes(cifar_record(3, a) + cifar_record(9, b))
    return path


class TestLoadCifar:
    def test_two_records(self, two_records):
        ds = load_cifar10([two_records])
        assert len(ds) == 2
        np.testing.assert_array_equal(ds.labels, [3, 9])
        assert ds.images.shape == (2, 3072)
        assert (ds.height, ds.width, ds.channels) == (32, 32, 3)

    def test_pixel_scaling(self, two_records):
        ds = load_cifar10(two_records)
        assert ds.images[0, 0] == 0.0
        assert ds.images[0, 255] == 1.0
        assert np.all(ds.images[1] == 1.0)

    def test_channel_major_order(self, tmp_path):
        pixels = np.concatenate([np.full(1024, 10), np.full(1024, 20), np.full(1024, 30)])
        path = tmp_path / "b.bin"
        path.write_bytes(cifar_record(0, pixels))
        cube = load_cifar10(path).as_cube()
        np.testing.assert_allclose(cube[0, :, 5, 7], np.array([10, 20, 30]) / 255.0)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(bytes(3072))
        with pytest.raises(DataFormatError, match="truncated record at offset 0"):
            load_cifar10(path)

    def test_truncated_second_record(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(cifar_record(1, np.zeros(3072, int)) + bytes(100))
        with pytest.raises(DataFormatError, match="truncated record at offset 3073"):
            load_cifar10(path)

    def test_bad_label(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(cifar_record(0, np.zeros(3072, int)) + cifar_record(10, np.zeros(3072, int)))
        with pytest.raises(DataFormatError, match="label 10 out of range at offset 3073"):
            load_cifar10(path)

    def test_concatenates_files(self, two_records):
        assert len(load_cifar10([two_records, two_records])) == 4


def image_set(rng, n=3, c=3, h=32, w=32):
    return LabeledImageSet(rng.random((n, c * h * w)), np.arange(n) % 10, h, w, c)


class TestCropCenter:
    def test_identity(self, rng):
        ds = image_set(rng)
        out = crop_center_patches(ds, 32)
        np.testing.assert_array_equal(out.images, ds.images)

    def test_small_known_image(self):
        img = np.arange(16, dtype=float)
        ds = LabeledImageSet(img[None], np.array([4]), 4, 4, 1)
        out = crop_center_patches(ds, 2)
        np.testing.assert_array_equal(out.images[0], [5, 6, 9, 10])
        assert out.labels[0] == 4

    @pytest.mark.parametrize("P", [10, 15, 20, 25, 32])
    def test_paper_patch_sizes(self, rng, P):
        out = crop_center_patches(image_set(rng), P)
        assert out.images.shape == (3, 3 * P * P)

    def test_rows_are_exact_subslices(self, rng):
        ds = image_set(rng, n=2)
        out = crop_center_patches(ds, 15)
        top = (32 - 15) // 2
        expected = ds.as_cube()[:, :, top:top + 15, top:top + 15].reshape(2, -1)
        np.testing.assert_array_equal(out.images, expected)

    def test_too_large(self, rng):
        with pytest.raises(DimensionError):
            crop_center_patches(image_set(rng), 33)


class TestRandomPatches:
    def test_deterministic(self, rng):
        ds = image_set(rng)
        np.testing.assert_array_equal(sample_random_patches(ds, 6, 20, seed=4), sample_random_patches(ds, 6, 20, seed=4))

    def test_zero_count(self, rng):
        out = sample_random_patches(image_set(rng), 6, 0, seed=1)
        assert out.shape == (0, 3 * 36)

    def test_too_large(self, rng):
        with pytest.raises(DimensionError):
            sample_random_patches(image_set(rng, h=5, w=5), 6, 3, seed=0)

    def test_origins_uniform(self):
        # 8x8 single-channel image with distinct pixels identifies every window origin
        ds = LabeledImageSet(np.arange(64, dtype=float)[None], np.array([0]), 8, 8, 1)
        patches, origins = sample_random_patches(ds, 6, 10_000, seed=7, return_origins=True)
        decoded = np.stack([patches[:, 0] // 8, patches[:, 0] % 8], axis=1).astype(int)
        np.testing.assert_array_equal(decoded, origins)
        counts = np.bincount(decoded[:, 0] * 3 + decoded[:, 1], minlength=9)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_video_patches(self):
        vids = gen_rotating_dots(4, frames=3, size=9, seed=0)
        out = sample_random_patches(vids, 5, 7, seed=0)
        assert out.shape == (7, 3 * 25)


def center_of_mass(img):
    size = img.shape[0]
    c = (size - 1) / 2
    rows, cols = np.mgrid[:size, :size]
    m = img.sum()
    return ((cols - c) * img).sum() / m, ((c - rows) * img).sum() / m


class TestRotatingDots:
    def test_zero_angle_gives_constant_frames(self):
        v = gen_rotating_dots(5, frames=10, size=13, angle_per_frame=0.0, seed=3).as_cube()
        for t in range(10):
            np.testing.assert_allclose(v[:, t], v[:, 0], atol=1e-12)

    def test_quarter_turn_moves_dot(self):
        size, r = 13, 4
        c = (size - 1) / 2
        img = render_dots([[c, c + r]], size)  # x = +r, y = 0
        out = rotate_images(img, np.pi / 2)
        target = np.zeros((size, size))
        target[int(c - r), int(c)] = 1.0  # x = 0, y = +r
        np.testing.assert_allclose(out, target, atol=1e-6)

    def test_default_paper_shape(self):
        v = gen_rotating_dots(3, seed=0)
        assert (v.frames, v.frame_size) == (10, 13)
        assert v.videos.shape == (3, 10 * 169)

    def test_pixel_range_and_determinism(self):
        a = gen_rotating_dots(20, seed=11)
        b = gen_rotating_dots(20, seed=11)
        np.testing.assert_array_equal(a.videos, b.videos)
        assert a.videos.min() >= 0.0 and a.videos.max() <= 1.0

    def test_default_angles_in_range(self):
        v = gen_rotating_dots(200, seed=5)
        assert np.all((v.rotation_angle >= np.pi / 16) & (v.rotation_angle <= np.pi / 4))

    def test_rotation_preserves_mass_away_from_border(self):
        rng = np.random.default_rng(8)
        size = 13
        c = (size - 1) / 2
        for _ in range(200):
            # one dot kept >= 2 px from the border at every rotation
            radius = rng.uniform(0, c - 2.5)
            phi = rng.uniform(0, 2 * np.pi)
            pos = [[c - radius * np.sin(phi), c + radius * np.cos(phi)]]
            first = render_dots(pos, size)
            later = render_dots(rotate_points(pos, rng.uniform(0, 2 * np.pi), size), size)
            assert abs(later.sum() - first.sum()) <= 0.02 * first.sum()

    def test_generated_frames_keep_mass(self):
        v = gen_rotating_dots(400, dots_per_frame=1, seed=2).as_cube()
        first = v[:, 0].sum(axis=(1, 2))
        c = 6.0
        # only videos whose dot stays >= 2 px inside the frame at every angle
        rows, cols = np.mgrid[:13, :13]
        r = np.array([np.sqrt(((cols - c) ** 2 + (rows - c) ** 2) * img).sum() / img.sum() for img in v[:, 0]])
        keep = r <= c - 2.5
        assert keep.sum() > 10
        for t in range(1, 10):
            np.testing.assert_allclose(v[keep, t].sum(axis=(1, 2)), first[keep], rtol=0.02)

    def test_generated_frame_matches_rotated_positions(self):
        v = gen_rotating_dots(1, frames=3, size=13, dots_per_frame=1, angle_per_frame=np.pi / 2, seed=0)
        cube = v.as_cube()[0]
        x0, y0 = center_of_mass(cube[0])
        x1, y1 = center_of_mass(cube[1])
        np.testing.assert_allclose((x1, y1), (-y0, x0), atol=1e-6)

    def test_rotation_moves_center_of_mass(self):
        size = 13
        c = (size - 1) / 2
        img = render_dots([[c - 1.3, c + 2.7]], size)
        x0, y0 = center_of_mass(img)
        angle = 0.6
        x1, y1 = center_of_mass(rotate_images(img, angle))
        expected = (np.cos(angle) * x0 - np.sin(angle) * y0, np.sin(angle) * x0 + np.cos(angle) * y0)
        np.testing.assert_allclose((x1, y1), expected, atol=0.15)

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            gen_rotating_dots(0)
