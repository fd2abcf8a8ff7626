import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encsteal.data import (
    CIFAR_RECORD,
    Dataset,
    SyntheticSpec,
    class_templates,
    gen_synthetic,
    load_cifar_binary,
    load_dataset,
    save_dataset,
    shifted_variant,
    subsample,
    train_test_split,
)
from encsteal.evaluation import LinearProbe
from encsteal.exceptions import ConfigurationError, DataError, FormatError


def _record(label, fill):
    pixels = np.asarray(fill, dtype=np.uint8)
    return bytes([label]) + np.broadcast_to(pixels, (3072,)).tobytes()


class TestSynthetic:
    def test_zero_noise_classes_are_constant(self):
        ds = gen_synthetic(SyntheticSpec(classes=3, samples_per_class=5, noise_sigma=0.0))
        for k in range(3):
            imgs = ds.images[ds.labels == k]
            assert np.all(imgs == imgs[0])

    def test_templates_distinct(self):
        t = class_templates(SyntheticSpec(classes=4))
        for a in range(4):
            for b in range(a + 1, 4):
                assert np.abs(t[a] - t[b]).max() > 0.1

    @pytest.mark.parametrize("generator", ["blobs", "stripes"])
    def test_bit_identical(self, generator):
        spec = SyntheticSpec(generator=generator, seed=5)
        assert gen_synthetic(spec).images.tobytes() == gen_synthetic(spec).images.tobytes()

    def test_shape_range_and_labels(self):
        ds = gen_synthetic(SyntheticSpec(classes=3, samples_per_class=7, noise_sigma=0.4))
        assert ds.images.shape == (21, 3, 8, 8)
        assert ds.images.min() >= 0 and ds.images.max() <= 1
        np.testing.assert_array_equal(np.bincount(ds.labels), [7, 7, 7])

    def test_raw_pixels_linearly_separable(self):
        ds = gen_synthetic(SyntheticSpec(classes=2, samples_per_class=100, noise_sigma=0.05))
        X = ds.images.reshape(len(ds), -1)
        probe = LinearProbe(epochs=100, lr=1e-2, random_state=0).fit(X, ds.labels)
        assert probe.score(X, ds.labels) > 0.95

    def test_too_small_for_templates(self):
        with pytest.raises(ConfigurationError):
            gen_synthetic(SyntheticSpec(classes=5, image_size=(3, 4, 4)))
        with pytest.raises(ConfigurationError):
            gen_synthetic(SyntheticSpec(image_size=(3, 3, 8)))

    @pytest.mark.parametrize(
        "kwargs", [{"noise_sigma": -0.1}, {"generator": "plasma"}, {"classes": 0}, {"image_size": (8, 8)}]
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ConfigurationError):
            SyntheticSpec(**kwargs)


class TestShiftedVariant:
    def test_none_equals_base(self):
        spec = SyntheticSpec(seed=2)
        assert shifted_variant(spec, "none").images.tobytes() == gen_synthetic(spec).images.tobytes()

    def test_class_superset_doubles_classes(self):
        ds = shifted_variant(SyntheticSpec(classes=3, samples_per_class=4), "class-superset")
        assert ds.classes == 6
        np.testing.assert_array_equal(np.bincount(ds.labels), [4] * 6)

    def test_noise_up_raises_per_class_variance(self):
        spec = SyntheticSpec(classes=2, samples_per_class=200, noise_sigma=0.1)
        base, noisy = gen_synthetic(spec), shifted_variant(spec, "noise-up")
        for k in range(2):
            assert noisy.images[noisy.labels == k].var(axis=0).mean() > base.images[base.labels == k].var(axis=0).mean()

    def test_template_swap_moves_class_means(self):
        spec = SyntheticSpec(classes=4, samples_per_class=50, noise_sigma=0.1)
        base, swapped = gen_synthetic(spec), shifted_variant(spec, "template-swap")
        for k in range(4):
            gap = np.abs(base.images[base.labels == k].mean(0) - swapped.images[swapped.labels == k].mean(0)).max()
            assert gap > 0.1

    def test_unknown_shift(self):
        with pytest.raises(ConfigurationError):
            shifted_variant(SyntheticSpec(), "rotate")


class TestSplits:
    def test_train_test_split_disjoint_80_20(self):
        ds = gen_synthetic(SyntheticSpec(samples_per_class=25))
        train, test = train_test_split(ds, 0.2, 0)
        assert len(train) == 80 and len(test) == 20
        assert not set(train.ids) & set(test.ids)
        assert train.split == "train" and test.split == "test"
        np.testing.assert_array_equal(ds.images[test.ids], test.images)

    def test_subsample_counts(self):
        ds = gen_synthetic(SyntheticSpec(classes=4, samples_per_class=25))
        assert len(subsample(ds, 0.5, 1)) == 50
        full = subsample(ds, 1.0, 1)
        assert sorted(full.ids) == list(range(100))

    def test_subsample_deterministic(self):
        ds = gen_synthetic(SyntheticSpec(samples_per_class=25))
        np.testing.assert_array_equal(subsample(ds, 0.3, 4).ids, subsample(ds, 0.3, 4).ids)
        assert not np.array_equal(subsample(ds, 0.3, 4).ids, subsample(ds, 0.3, 5).ids)

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
    def test_subsample_bad_fraction(self, fraction):
        with pytest.raises(ConfigurationError):
            subsample(gen_synthetic(SyntheticSpec()), fraction)

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(1, 300), f1=st.floats(0.01, 1.0), f2=st.floats(0.01, 1.0), seed=st.integers(0, 99))
    def test_subsample_of_subsample_composes(self, m, f1, f2, seed):
        ds = Dataset(np.zeros((m, 1, 1, 1)))
        inner = subsample(ds, f1, seed)
        outer = subsample(inner, f2, seed + 1)
        assert len(inner) == math.ceil(f1 * m)
        assert len(outer) == math.ceil(f2 * math.ceil(f1 * m))
        assert abs(len(outer) - f1 * f2 * m) < 2 + 1e-9
        assert set(outer.ids) <= set(inner.ids)


class TestDataset:
    def test_label_range_checked(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 3]), classes=3)

    def test_empty(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((0, 1, 2, 2)))

    def test_save_load_round_trip_keeps_large_ids(self, tmp_path):
        ds = gen_synthetic(SyntheticSpec(samples_per_class=3))
        ds.ids = ds.ids + 1_000_000_007
        back = load_dataset(save_dataset(ds, str(tmp_path / "ds")))
        np.testing.assert_array_equal(back.ids, ds.ids)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.images.tobytes() == ds.images.tobytes()


class TestCifar:
    def test_two_record_fixture(self, tmp_path):
        path = tmp_path / "data_batch.bin"
        first = bytes([7]) + bytes(range(256)) * 12
        path.write_bytes(first + _record(2, 255))
        ds = load_cifar_binary(str(path))
        assert len(ds) == 2 and ds.images.shape == (2, 3, 32, 32)
        np.testing.assert_array_equal(ds.labels, [7, 2])
        assert np.all(ds.images[1] == 1.0)
        assert ds.images[0, 0, 0, 0] == 0.0
        assert ds.images[0, 0, 0, 5] == np.float32(5 / 255)
        # channel-planar layout: byte 1024 of the pixels starts the green plane
        assert ds.images[0, 1, 0, 0] == np.float32((1024 % 256) / 255)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(FormatError):
            load_cifar_binary(str(path))

    def test_truncated_reports_offset(self, tmp_path):
        path = tmp_path / "cut.bin"
        path.write_bytes(_record(1, 0) + _record(1, 0)[:100])
        with pytest.raises(FormatError, match=f"offset {CIFAR_RECORD}"):
            load_cifar_binary(str(path))
