"""Prompt bank: initialization, pairing, encoding, trainable parameter set."""

import numpy as np
import pytest

from biovlm import autodiff as ad
from biovlm.encoders import EncoderRegime, FrozenTextEncoder
from biovlm.errors import ConfigError
from biovlm.losses import loss_asa
from biovlm.promptbank import (clone_bank, context_parameter_count, encode_all,
                               init_bank, parameter_count,
                               trainable_parameters)

from reference_impl import finite_difference, rel_error


def unit_grid(rng, k, n, d):
    a = rng.normal(size=(k, n, d))
    return a / np.linalg.norm(a, axis=2, keepdims=True)


@pytest.fixture
def text_encoder():
    return FrozenTextEncoder(token_dim=8, embed_dim=16, seed=5)


class TestInit:
    def test_deterministic(self, text_encoder):
        rng = np.random.default_rng(0)
        attrs = unit_grid(rng, 3, 2, 16)
        b1 = init_bank(3, 2, EncoderRegime.SYNTHETIC, attrs, seed=9,
                       context_length=4, token_dim=8)
        b2 = init_bank(3, 2, EncoderRegime.SYNTHETIC, attrs, seed=9,
                       context_length=4, token_dim=8)
        for p1, p2 in zip(trainable_parameters(b1), trainable_parameters(b2)):
            np.testing.assert_array_equal(p1.data, p2.data)
        np.testing.assert_array_equal(b1.class_tokens, b2.class_tokens)

    def test_grid_shapes_and_norms(self, text_encoder):
        rng = np.random.default_rng(1)
        attrs = unit_grid(rng, 3, 2, 16)
        bank = init_bank(3, 2, EncoderRegime.SYNTHETIC, attrs, seed=3,
                         context_length=4, token_dim=8)
        grid = encode_all(bank, text_encoder)
        assert grid.stacked.shape == (6, 16)
        norms = np.linalg.norm(grid.stacked.data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)
        for i in range(3):
            for j in range(2):
                assert grid.cell(i, j).shape == (16,)

    def test_imported_initializes_at_attributes(self):
        rng = np.random.default_rng(2)
        attrs = unit_grid(rng, 4, 3, 10)
        bank = init_bank(4, 3, EncoderRegime.IMPORTED, attrs, seed=0)
        grid = encode_all(bank, None)
        np.testing.assert_allclose(grid.as_array(), attrs, atol=1e-12)
        # perfect initial alignment: -K*N
        assert loss_asa(grid, attrs).item() == pytest.approx(-12.0, abs=1e-9)

    def test_bad_configs_rejected(self):
        rng = np.random.default_rng(3)
        attrs = unit_grid(rng, 2, 1, 8)
        with pytest.raises(ConfigError):
            init_bank(1, 1, EncoderRegime.IMPORTED, attrs[:1], seed=0)
        with pytest.raises(ConfigError):
            init_bank(2, 0, EncoderRegime.IMPORTED, attrs[:, :0], seed=0)

    def test_attribute_shuffle_shuffles_initialization(self):
        """Pairing is positional: permuting attribute order permutes the
        imported prompt initialization identically."""
        rng = np.random.default_rng(4)
        attrs = unit_grid(rng, 3, 4, 8)
        perm = rng.permutation(4)
        b1 = init_bank(3, 4, EncoderRegime.IMPORTED, attrs, seed=1)
        b2 = init_bank(3, 4, EncoderRegime.IMPORTED, attrs[:, perm], seed=1)
        for i in range(3):
            for j, pj in enumerate(perm):
                np.testing.assert_array_equal(
                    b2.prompts[i][j].direct_embedding.data,
                    b1.prompts[i][pj].direct_embedding.data)


class TestEncodeAll:
    def test_perturbing_one_context_changes_one_cell(self, text_encoder):
        rng = np.random.default_rng(5)
        attrs = unit_grid(rng, 3, 2, 16)
        bank = init_bank(3, 2, EncoderRegime.SYNTHETIC, attrs, seed=7,
                         context_length=4, token_dim=8)
        before = encode_all(bank, text_encoder).as_array()
        bank.prompts[1][0].context.data += 0.5
        after = encode_all(bank, text_encoder).as_array()
        for i in range(3):
            for j in range(2):
                changed = not np.array_equal(before[i, j], after[i, j])
                assert changed == (i == 1 and j == 0)

    def test_gradient_through_contexts(self, text_encoder):
        rng = np.random.default_rng(6)
        attrs = unit_grid(rng, 2, 2, 16)
        bank = init_bank(2, 2, EncoderRegime.SYNTHETIC, attrs, seed=11,
                         context_length=3, token_dim=8)
        w = rng.normal(size=(4, 16))

        def value():
            grid = encode_all(bank, text_encoder)
            return ad.sum_(ad.mul(grid.stacked, ad.constant(w))).item()

        grid = encode_all(bank, text_encoder)
        ad.sum_(ad.mul(grid.stacked, ad.constant(w))).backward()
        params = trainable_parameters(bank)
        worst = 0.0
        for p in params:
            flat = p.data.reshape(-1)
            for idx in rng.choice(flat.size, size=4, replace=False):
                fd = finite_difference(value, flat, idx)
                worst = max(worst, rel_error(fd, p.grad.reshape(-1)[idx]))
            p.zero_grad()
        assert worst < 1e-4

    def test_imported_gradients_flow_through_normalization(self):
        rng = np.random.default_rng(7)
        attrs = unit_grid(rng, 2, 1, 6)
        bank = init_bank(2, 1, EncoderRegime.IMPORTED, attrs, seed=0)
        grid = encode_all(bank, None)
        ad.sum_(grid.stacked).backward()
        for p in trainable_parameters(bank):
            assert p.grad is not None
            # unit-sphere projection: gradient orthogonal to the embedding
            assert abs(float(p.grad @ p.data)) < 1e-10


class TestTrainableParameters:
    def test_synthetic_count(self):
        rng = np.random.default_rng(8)
        attrs = unit_grid(rng, 9, 10, 16)
        bank = init_bank(9, 10, EncoderRegime.SYNTHETIC, attrs, seed=1,
                         context_length=4, token_dim=16)
        assert parameter_count(bank) == 5760
        assert context_parameter_count(10, 4, 16, num_classes=9) == 5760

    def test_reported_parameter_scale_at_real_token_width(self):
        # one shared context set at width 768 lands on the ~30K figure
        count = context_parameter_count(10, 4, 768)
        assert count == 30720
        assert abs(count / 1e6 - 0.0307) < 1e-4

    def test_imported_count(self):
        rng = np.random.default_rng(9)
        attrs = unit_grid(rng, 2, 1, 64)
        bank = init_bank(2, 1, EncoderRegime.IMPORTED, attrs, seed=1)
        assert parameter_count(bank) == 128

    def test_excludes_frozen_tensors(self):
        rng = np.random.default_rng(10)
        attrs = unit_grid(rng, 3, 2, 16)
        bank = init_bank(3, 2, EncoderRegime.SYNTHETIC, attrs, seed=1,
                         context_length=4, token_dim=8)
        params = {id(p) for p in trainable_parameters(bank)}
        for row in bank.prompts:
            for p in row:
                assert id(p.class_token) not in params
        assert all(t.requires_grad for t in trainable_parameters(bank))


def test_clone_bank_is_deep():
    rng = np.random.default_rng(11)
    attrs = unit_grid(rng, 2, 2, 8)
    bank = init_bank(2, 2, EncoderRegime.IMPORTED, attrs, seed=1)
    copy = clone_bank(bank)
    copy.prompts[0][0].direct_embedding.data += 1.0
    assert not np.array_equal(copy.prompts[0][0].direct_embedding.data,
                              bank.prompts[0][0].direct_embedding.data)
