"""Synthetic generation, augmentation statistics, and the bundle container."""

import numpy as np
import pytest

from biovlm.datahub import (AugmentationPolicy, ClassSubsetDataset,
                            EmbeddingBundle, ImportedDataset, SyntheticTask,
                            attribute_label_mutual_information, augment,
                            bundle_from_synthetic, class_means,
                            deserialize_bank, generate_task, load_bundle,
                            load_checkpoint, save_bundle, save_checkpoint,
                            serialize_bank)
from biovlm.encoders import EncoderConfig, EncoderRegime
from biovlm.errors import ConfigError, DataError
from biovlm.promptbank import init_bank

TASK = SyntheticTask(name="small", num_classes=4, train_per_class=10,
                     test_per_class=12, informative_attributes=2,
                     noise_attributes=3, seed=21)
ENC = EncoderConfig(seed=21)


@pytest.fixture(scope="module")
def dataset():
    return generate_task(TASK, ENC)


class TestGeneration:
    def test_determinism(self, dataset):
        again = generate_task(TASK, ENC)
        np.testing.assert_array_equal(dataset.train_raw, again.train_raw)
        np.testing.assert_array_equal(dataset.attribute_embeddings,
                                      again.attribute_embeddings)

    def test_zero_std_collapses_within_class(self):
        task = SyntheticTask(name="degenerate", num_classes=3,
                             train_per_class=5, test_per_class=2,
                             class_std=0.0, informative_attributes=1,
                             noise_attributes=0, seed=2)
        ds = generate_task(task, EncoderConfig(seed=2))
        for c in range(3):
            rows = ds.train_raw[ds.train_labels == c]
            assert np.all(rows == rows[0])

    def test_class_means_distinct_and_scaled(self):
        means = class_means(TASK)
        assert means.shape == (4, TASK.raw_dim)
        np.testing.assert_allclose(np.linalg.norm(means, axis=1),
                                   TASK.mean_scale, atol=1e-12)
        gram = means @ means.T
        off = gram[~np.eye(4, dtype=bool)]
        assert np.abs(off).max() < 1e-9  # orthogonal when raw_dim >= K

    def test_attribute_count_rescale_keeps_fraction(self):
        base = SyntheticTask()  # 3 informative + 7 noise
        for total in (1, 2, 5, 10, 20, 50, 100):
            scaled = base.with_attribute_count(total)
            assert scaled.attributes_per_class == total
            assert scaled.informative_attributes >= 1

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticTask(num_classes=1)
        with pytest.raises(ConfigError):
            SyntheticTask(class_std=-0.1)
        with pytest.raises(ConfigError):
            SyntheticTask(informative_attributes=0, noise_attributes=0)
        with pytest.raises(ConfigError):
            SyntheticTask.from_dict({"bogus_field": 1})


class TestAttributeInformativeness:
    def test_noise_columns_have_zero_mutual_information(self, dataset):
        n_info = TASK.informative_attributes
        for j in range(n_info, TASK.attributes_per_class):
            mi = attribute_label_mutual_information(dataset, j)
            assert mi == pytest.approx(0.0, abs=1e-12)

    def test_informative_columns_carry_signal(self, dataset):
        for j in range(TASK.informative_attributes):
            mi = attribute_label_mutual_information(dataset, j)
            assert mi > 0.5

    def test_noise_attributes_identical_across_classes(self, dataset):
        attrs = dataset.attribute_embeddings
        for j in range(TASK.informative_attributes, TASK.attributes_per_class):
            for i in range(1, TASK.num_classes):
                np.testing.assert_array_equal(attrs[i, j], attrs[0, j])


class TestAugmentation:
    def test_zero_std_policy_is_identity(self):
        policy = AugmentationPolicy(weak_std=0.0, strong_std=0.0,
                                    mask_prob=0.0)
        x = np.arange(8.0)
        np.testing.assert_array_equal(augment(x, policy, "weak", (0, 0, 0)), x)
        np.testing.assert_array_equal(augment(x, policy, "strong", (0, 0, 0)), x)

    def test_deterministic_per_context(self):
        policy = AugmentationPolicy(weak_std=0.1, strong_std=0.3)
        x = np.ones(16)
        a = augment(x, policy, "weak", (7, 3, 2))
        b = augment(x, policy, "weak", (7, 3, 2))
        np.testing.assert_array_equal(a, b)
        c = augment(x, policy, "weak", (7, 3, 3))
        assert not np.array_equal(a, c)

    def test_weak_perturbation_second_moment(self):
        d = 64
        sigma = 0.07
        policy = AugmentationPolicy(weak_std=sigma, strong_std=0.3)
        x = np.zeros(d)
        sq = [np.sum(augment(x, policy, "weak", (1, i, 0)) ** 2)
              for i in range(3000)]
        expect = d * sigma ** 2
        assert np.mean(sq) == pytest.approx(expect, rel=0.05)

    def test_strong_masks_about_ten_percent(self):
        policy = AugmentationPolicy(weak_std=0.0, strong_std=0.0,
                                    mask_prob=0.1)
        x = np.ones(64)
        zeroed = [np.mean(augment(x, policy, "strong", (2, i, 0)) == 0.0)
                  for i in range(3000)]
        assert np.mean(zeroed) == pytest.approx(0.1, rel=0.05)

    def test_weak_smaller_than_strong_distributionally(self, dataset):
        idx = np.arange(len(dataset.train_labels))
        weak_norms, strong_norms = [], []
        for epoch in range(5):
            raw = dataset.train_raw
            for i in idx[:20]:
                w = augment(raw[i], dataset.policy, "weak",
                            (TASK.seed, int(i), epoch))
                s = augment(raw[i], dataset.policy, "strong",
                            (TASK.seed, int(i), epoch))
                weak_norms.append(np.linalg.norm(w - raw[i]))
                strong_norms.append(np.linalg.norm(s - raw[i]))
        assert np.mean(weak_norms) < np.mean(strong_norms)


class TestBundleRoundTrip:
    def test_save_load_save_is_byte_identical(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        p1 = tmp_path / "a.bvlb"
        p2 = tmp_path / "b.bvlb"
        save_bundle(bundle, p1)
        loaded = load_bundle(p1)
        save_bundle(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_arrays_match(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        path = tmp_path / "c.bvlb"
        save_bundle(bundle, path)
        loaded = load_bundle(path)
        np.testing.assert_allclose(loaded.img_orig, bundle.img_orig,
                                   atol=1e-7)
        np.testing.assert_array_equal(loaded.labels, bundle.labels)
        assert loaded.manifest["dataset"] == "small"

    def test_not_a_bundle(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DataError, match="not a bundle"):
            load_bundle(path)

    def test_single_byte_corruption_names_section(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        path = tmp_path / "d.bvlb"
        save_bundle(bundle, path)
        blob = bytearray(path.read_bytes())
        manifest_len = int.from_bytes(blob[8:16], "little")
        payload_start = 16 + manifest_len
        # flip one byte inside the first section's payload
        blob[payload_start + 5] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="corrupt section IMG_ORIG"):
            load_bundle(path)

    def test_truncated_file(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        path = tmp_path / "e.bvlb"
        save_bundle(bundle, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 40])
        with pytest.raises(DataError, match="corrupt section"):
            load_bundle(path)

    def test_norm_violation_names_row(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        bundle.img_orig = bundle.img_orig.copy()
        bundle.img_orig[3] *= 2.0
        path = tmp_path / "f.bvlb"
        save_bundle(bundle, path)
        with pytest.raises(DataError, match="invalid embedding row 3"):
            load_bundle(path)

    def test_missing_bank_is_absent_checkpoint(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        path = tmp_path / "g.bvlb"
        save_bundle(bundle, path)
        assert load_bundle(path).bank_bytes is None
        with pytest.raises(DataError, match="no checkpoint"):
            load_checkpoint(path)


class TestCheckpointCodec:
    def test_roundtrip_both_regimes(self, dataset, tmp_path):
        for regime in (EncoderRegime.SYNTHETIC, EncoderRegime.IMPORTED):
            bank = init_bank(4, 5, regime, dataset.attribute_embeddings,
                             seed=9, context_length=4,
                             token_dim=ENC.token_dim)
            path = tmp_path / f"{regime.value}.bvlb"
            save_checkpoint(bank, path)
            clone = load_checkpoint(path)
            assert clone.regime is regime
            np.testing.assert_array_equal(clone.attribute_embeddings,
                                          bank.attribute_embeddings)

    def test_corrupt_checkpoint_payload(self):
        bank = init_bank(2, 1, EncoderRegime.IMPORTED,
                         np.eye(2).reshape(2, 1, 2), seed=0)
        blob = serialize_bank(bank)
        with pytest.raises(DataError):
            deserialize_bank(blob[:-8])
        with pytest.raises(DataError):
            deserialize_bank(blob + b"\x00" * 8)


class TestImportedDataset:
    def test_wraps_bundle(self, dataset, tmp_path):
        bundle = bundle_from_synthetic(dataset)
        imported = ImportedDataset(bundle)
        assert imported.num_classes == dataset.num_classes
        v, labels = imported.test_set()
        v2, labels2 = dataset.test_set()
        np.testing.assert_array_equal(labels, labels2)
        np.testing.assert_allclose(v, v2, atol=1e-7)

    def test_views_fixed_across_epochs(self, dataset):
        imported = ImportedDataset(bundle_from_synthetic(dataset))
        idx = np.arange(6)
        a = imported.training_views(idx, epoch=0)
        b = imported.training_views(idx, epoch=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_synthetic_views_resample_per_epoch(self, dataset):
        idx = np.arange(6)
        _, w0, _ = dataset.training_views(idx, epoch=0)
        _, w1, _ = dataset.training_views(idx, epoch=1)
        assert not np.array_equal(w0, w1)


class TestClassSubset:
    def test_remaps_labels_and_attributes(self, dataset):
        subset = ClassSubsetDataset(dataset, [2, 3])
        assert subset.num_classes == 2
        assert set(subset.train_labels) == {0, 1}
        np.testing.assert_array_equal(subset.attribute_embeddings[0],
                                      dataset.attribute_embeddings[2])
        assert subset.original_class_ids() == [2, 3]

    def test_views_match_parent(self, dataset):
        subset = ClassSubsetDataset(dataset, [1, 3])
        sub_idx = subset.train_indices_for_class(0)[:2]
        vo, vw, vs = subset.training_views(sub_idx, epoch=2)
        parent_idx = subset._train_idx[sub_idx]
        po, pw, ps = dataset.training_views(parent_idx, epoch=2)
        np.testing.assert_array_equal(vo, po)
        np.testing.assert_array_equal(vw, pw)

    def test_test_split_filtered(self, dataset):
        subset = ClassSubsetDataset(dataset, [0, 1])
        _, labels = subset.test_set()
        assert set(labels) <= {0, 1}
        assert len(labels) == 2 * TASK.test_per_class
