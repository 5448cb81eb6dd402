#!/usr/bin/env python3
"""
Unit tests for dataset scanning, splitting, preprocessing and batching

Run tests:
    python -m pytest tests/test_dataset_pipeline.py -v
"""

import json
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st
from PIL import Image

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
from src.dataset_pipeline import (TEST, TRAIN, UNASSIGNED, VAL, ClassVocabulary,
                                  PreprocessConfig, apportion, batch_order,
                                  load_and_preprocess, load_manifest, make_batches,
                                  save_manifest, scan_dataset, split_dataset)
from src.errors import (AlreadySplitError, BadConfigError, BadManifestError,
                        BadRatiosError, DecodeError, EmptyDatasetError,
                        EmptySplitError, MissingFileError, MissingRootError)
from src.synthetic import generate_synthetic_dataset
from tests.fixtures import write_image, write_tree


class TestScan(unittest.TestCase):
    """Catalog building"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_scan_counts_and_vocabulary(self):
        write_tree(self.temp_dir, per_class=3)
        manifest, report = scan_dataset(self.temp_dir)
        self.assertEqual(manifest.vocabulary.names, ('Alpha', 'Beta', 'Gamma'))
        self.assertEqual(len(manifest.records), 9)
        self.assertTrue(all(record.split == UNASSIGNED for record in manifest.records))
        self.assertEqual(report.per_class, {'Alpha': 3, 'Beta': 3, 'Gamma': 3})

    def test_vocabulary_is_byte_sorted(self):
        for name in ('mumbai', 'Delhi', 'Ahmedabad'):
            write_image(os.path.join(self.temp_dir, name, 'a.png'))
        manifest, _ = scan_dataset(self.temp_dir)
        self.assertEqual(manifest.vocabulary.names, ('Ahmedabad', 'Delhi', 'mumbai'))

    def test_non_images_are_skipped(self):
        write_tree(self.temp_dir, per_class=2)
        with open(os.path.join(self.temp_dir, 'Alpha', 'notes.txt'), 'w') as f:
            f.write('not an image')
        with open(os.path.join(self.temp_dir, 'README'), 'w') as f:
            f.write('top-level file')
        manifest, report = scan_dataset(self.temp_dir)
        self.assertEqual(len(manifest.records), 6)
        self.assertEqual(len(report.skipped), 2)

    def test_uppercase_extensions_accepted(self):
        write_image(os.path.join(self.temp_dir, 'Alpha', 'A.JPG'), fmt='JPEG')
        write_image(os.path.join(self.temp_dir, 'Beta', 'b.jpeg'), fmt='JPEG')
        manifest, _ = scan_dataset(self.temp_dir)
        self.assertEqual(len(manifest.records), 2)

    def test_missing_root(self):
        with self.assertRaises(MissingRootError):
            scan_dataset(os.path.join(self.temp_dir, 'nope'))

    def test_empty_dataset(self):
        os.makedirs(os.path.join(self.temp_dir, 'Alpha'))
        with self.assertRaises(EmptyDatasetError):
            scan_dataset(self.temp_dir)

    def test_vocabulary_rejects_unsorted(self):
        with self.assertRaises(BadConfigError):
            ClassVocabulary(('b', 'a'))


class TestApportion(unittest.TestCase):
    """Largest-remainder allocation"""

    def test_seven_records(self):
        self.assertEqual(apportion(7, (0.70, 0.15, 0.15)), (5, 1, 1))

    def test_hundred_records(self):
        self.assertEqual(apportion(100, (0.70, 0.15, 0.15)), (70, 15, 15))

    def test_tie_goes_to_train_first(self):
        self.assertEqual(apportion(1, (0.5, 0.5, 0.0)), (1, 0, 0))

    @given(st.integers(min_value=0, max_value=500),
           st.lists(st.integers(min_value=0, max_value=20), min_size=3, max_size=3).filter(lambda w: sum(w) > 0))
    @settings(max_examples=60, deadline=None)
    def test_total_and_quota_bounds(self, count, weights):
        ratios = tuple(w / sum(weights) for w in weights)
        counts = apportion(count, ratios)
        self.assertEqual(sum(counts), count)
        for allotted, ratio in zip(counts, ratios):
            self.assertLessEqual(abs(allotted - count * ratio), 1.0 + 1e-9)


class TestSplit(unittest.TestCase):
    """Stratified deterministic splitting"""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        generate_synthetic_dataset(cls.temp_dir, ('A', 'B', 'C', 'D', 'E'), per_class=100, size=8, seed=1)
        cls.manifest, _ = scan_dataset(cls.temp_dir)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_exact_stratification(self):
        split = split_dataset(self.manifest, (0.70, 0.15, 0.15), seed=3)
        counts = split.split_counts()
        self.assertEqual(counts[TRAIN], [70] * 5)
        self.assertEqual(counts[VAL], [15] * 5)
        self.assertEqual(counts[TEST], [15] * 5)
        self.assertEqual(counts[UNASSIGNED], [0] * 5)

    def test_same_seed_same_assignment(self):
        first = split_dataset(self.manifest, seed=9)
        second = split_dataset(self.manifest, seed=9)
        self.assertEqual([r.split for r in first.records], [r.split for r in second.records])

    def test_different_seed_different_assignment(self):
        first = split_dataset(self.manifest, seed=1)
        second = split_dataset(self.manifest, seed=2)
        self.assertNotEqual([r.split for r in first.records], [r.split for r in second.records])

    def test_input_order_does_not_matter(self):
        reversed_manifest = type(self.manifest)(self.manifest.root, self.manifest.vocabulary,
                                                list(reversed(self.manifest.records)))
        first = {r.path: r.split for r in split_dataset(self.manifest, seed=4).records}
        second = {r.path: r.split for r in split_dataset(reversed_manifest, seed=4).records}
        self.assertEqual(first, second)

    def test_already_split(self):
        split = split_dataset(self.manifest, seed=0)
        with self.assertRaises(AlreadySplitError):
            split_dataset(split, seed=0)
        again = split_dataset(split, seed=5, overwrite=True)
        self.assertEqual(again.split_seed, 5)

    def test_bad_ratios(self):
        for ratios in ((0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.5, 0.5)):
            with self.assertRaises(BadRatiosError):
                split_dataset(self.manifest, ratios, seed=0)

    def test_input_manifest_untouched(self):
        split_dataset(self.manifest, seed=0)
        self.assertFalse(self.manifest.is_split)


class TestPreprocess(unittest.TestCase):
    """Decoding and scaling"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_shape_dtype_and_range(self):
        path = write_image(os.path.join(self.temp_dir, 'a.png'), size=(30, 20))
        tensor = load_and_preprocess(path, PreprocessConfig(16, 24))
        self.assertEqual(tensor.shape, (16, 24, 3))
        self.assertEqual(tensor.dtype, np.float32)
        self.assertGreaterEqual(tensor.min(), 0.0)
        self.assertLessEqual(tensor.max(), 1.0)

    def test_grayscale_replicated(self):
        path = write_image(os.path.join(self.temp_dir, 'g.png'), mode='L')
        tensor = load_and_preprocess(path, PreprocessConfig(8, 8))
        np.testing.assert_array_equal(tensor[..., 0], tensor[..., 1])
        np.testing.assert_array_equal(tensor[..., 1], tensor[..., 2])

    def test_alpha_dropped(self):
        path = write_image(os.path.join(self.temp_dir, 'rgba.png'), mode='RGBA')
        self.assertEqual(load_and_preprocess(path, PreprocessConfig(8, 8)).shape, (8, 8, 3))

    def test_same_size_is_plain_scaling(self):
        pixels = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
        path = os.path.join(self.temp_dir, 'exact.png')
        Image.fromarray(pixels).save(path)
        tensor = load_and_preprocess(path, PreprocessConfig(8, 8))
        np.testing.assert_array_equal(tensor, pixels.astype(np.float32) / np.float32(255.0))

    def test_imagenet_scaling(self):
        path = write_image(os.path.join(self.temp_dir, 'n.png'), size=(8, 8))
        unit = load_and_preprocess(path, PreprocessConfig(8, 8, 'unit'))
        normalized = load_and_preprocess(path, PreprocessConfig(8, 8, 'imagenet'))
        np.testing.assert_allclose(normalized[..., 0], (unit[..., 0] - 0.485) / 0.229, rtol=1e-5, atol=1e-5)

    def test_corrupt_file(self):
        path = os.path.join(self.temp_dir, 'broken.jpg')
        with open(path, 'wb') as f:
            f.write(b'\xff\xd8\xff garbage')
        with self.assertRaises(DecodeError):
            load_and_preprocess(path, PreprocessConfig(8, 8))

    def test_multi_picture_jpeg_uses_first_frame(self):
        path = os.path.join(self.temp_dir, 'camera.jpg')
        first, second = Image.new('RGB', (16, 16), (255, 0, 0)), Image.new('RGB', (16, 16), (0, 0, 255))
        first.save(path, format='MPO', save_all=True, append_images=[second], quality=95)
        with Image.open(path) as img:
            self.assertEqual(img.format, 'MPO')
        tensor = load_and_preprocess(path, PreprocessConfig(8, 8))
        self.assertEqual(tensor.shape, (8, 8, 3))
        np.testing.assert_allclose(tensor.mean(axis=(0, 1)), [1.0, 0.0, 0.0], atol=0.05)

    def test_unsupported_format(self):
        path = os.path.join(self.temp_dir, 'image.png')
        Image.new('RGB', (8, 8)).save(path, format='BMP')
        with self.assertRaises(DecodeError):
            load_and_preprocess(path, PreprocessConfig(8, 8))

    def test_missing_file(self):
        with self.assertRaises(MissingFileError):
            load_and_preprocess(os.path.join(self.temp_dir, 'gone.png'), PreprocessConfig(8, 8))

    def test_bad_config(self):
        with self.assertRaises(BadConfigError):
            PreprocessConfig(4, 4)
        with self.assertRaises(BadConfigError):
            PreprocessConfig(8, 8, 'zscore')


class TestBatches(unittest.TestCase):
    """Batch iteration"""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        generate_synthetic_dataset(cls.temp_dir, ('A', 'B', 'C'), per_class=10, size=8, seed=2)
        manifest, _ = scan_dataset(cls.temp_dir)
        cls.manifest = split_dataset(manifest, (0.7, 0.1, 0.2), seed=0)
        cls.config = PreprocessConfig(8, 8)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_batch_sizes_cover_split(self):
        batches = list(make_batches(self.manifest, TRAIN, 4, self.config))
        self.assertEqual([len(x) for x, _ in batches], [4, 4, 4, 4, 4, 1])
        for inputs, labels in batches:
            self.assertEqual(inputs.shape[1:], (8, 8, 3))
            np.testing.assert_array_equal(labels.sum(axis=1), np.ones(len(labels)))

    def test_unshuffled_follows_manifest_order(self):
        groups = batch_order(self.manifest, TEST, 100)
        self.assertEqual(groups[0], self.manifest.split_records(TEST))

    def test_shuffle_deterministic_per_epoch(self):
        a = batch_order(self.manifest, TRAIN, 5, shuffle_seed=3, epoch=1)
        b = batch_order(self.manifest, TRAIN, 5, shuffle_seed=3, epoch=1)
        c = batch_order(self.manifest, TRAIN, 5, shuffle_seed=3, epoch=2)
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_workers_do_not_change_batches(self):
        serial = list(make_batches(self.manifest, TRAIN, 4, self.config, shuffle_seed=1, epoch=1))
        threaded = list(make_batches(self.manifest, TRAIN, 4, self.config, shuffle_seed=1, epoch=1, workers=3))
        self.assertEqual(len(serial), len(threaded))
        for (xa, ya), (xb, yb) in zip(serial, threaded):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)

    def test_empty_split(self):
        manifest, _ = scan_dataset(self.temp_dir)
        with self.assertRaises(EmptySplitError):
            list(make_batches(manifest, TRAIN, 4, self.config))


class TestManifestFiles(unittest.TestCase):
    """Manifest persistence"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        write_tree(os.path.join(self.temp_dir, 'data'), per_class=3)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_save_and_load(self):
        manifest, _ = scan_dataset(os.path.join(self.temp_dir, 'data'))
        manifest = split_dataset(manifest, seed=4)
        path = save_manifest(manifest, os.path.join(self.temp_dir, 'manifest.json'))
        loaded = load_manifest(path)
        self.assertEqual(loaded.vocabulary, manifest.vocabulary)
        self.assertEqual([(r.class_index, r.split) for r in loaded.records],
                         [(r.class_index, r.split) for r in manifest.records])
        self.assertEqual([os.path.realpath(r.path) for r in loaded.records],
                         [os.path.realpath(r.path) for r in manifest.records])
        self.assertEqual(loaded.split_seed, 4)

    def test_missing_manifest(self):
        with self.assertRaises(MissingFileError):
            load_manifest(os.path.join(self.temp_dir, 'missing.json'))

    def test_malformed_manifest(self):
        path = os.path.join(self.temp_dir, 'bad.json')
        with open(path, 'w') as f:
            json.dump({'vocabulary': ['A'], 'records': [{'path': 'x.png'}]}, f)
        with self.assertRaises(BadManifestError):
            load_manifest(path)


class TestSynthetic(unittest.TestCase):
    """Synthetic generator determinism"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_same_seed_same_pixels(self):
        a = generate_synthetic_dataset(os.path.join(self.temp_dir, 'a'), ('X', 'Y'), per_class=2, size=8, seed=5)
        b = generate_synthetic_dataset(os.path.join(self.temp_dir, 'b'), ('X', 'Y'), per_class=2, size=8, seed=5)
        for name in ('X', 'Y'):
            for image in ('img_0000.png', 'img_0001.png'):
                with Image.open(a / name / image) as first, Image.open(b / name / image) as second:
                    np.testing.assert_array_equal(np.asarray(first), np.asarray(second))

    def test_classes_have_distinct_mean_colors(self):
        root = generate_synthetic_dataset(self.temp_dir, ('X', 'Y', 'Z'), per_class=1, size=16, seed=0)
        means = []
        for name in ('X', 'Y', 'Z'):
            with Image.open(root / name / 'img_0000.png') as image:
                means.append(np.asarray(image, dtype=np.float64).mean(axis=(0, 1)))
        for i in range(3):
            for j in range(i + 1, 3):
                self.assertGreater(np.abs(means[i] - means[j]).max(), 30.0)


def run_tests():
    """Run all tests"""
    suite = unittest.TestLoader().loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == '__main__':
    sys.exit(0 if run_tests() else 1)
