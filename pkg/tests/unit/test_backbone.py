"""Unit tests for unified sequence assembly and the backbone forward."""

import numpy as np
import pytest

from src.autodiff.rng import Rng
from src.backbone.assembly import (
    LIN_QUERY,
    TEXT,
    VIS_QUERY,
    VISION,
    BackboneConfig,
    BackboneParams,
    assemble_input,
    backbone_forward,
    count_forwards_reset,
    encode_observation,
)
from src.errors import InputError


def make_backbone(vocab, **overrides):
    cfg = BackboneConfig(vocab_size=len(vocab), d_model=16, n_blocks=1, n_heads=4, **overrides)
    return BackboneParams.init(Rng(0), cfg)


@pytest.fixture
def backbone(vocab):
    return make_backbone(vocab)


@pytest.fixture
def observation(episodes):
    ep = episodes[0]
    return ep.frames[0].image, ep.instruction_ids


# ──────────────────────────────────────────────
# Assembly
# ──────────────────────────────────────────────


class TestAssembleInput:

    def test_segment_order(self, backbone, observation):
        seq = assemble_input(*observation, backbone)
        assert seq.length == 108
        assert seq.segments == [VISION] * 64 + [VIS_QUERY] * 16 + [TEXT] * 24 + [LIN_QUERY] * 4
        assert seq.embeddings.shape == (108, 16)
        np.testing.assert_array_equal(seq.positions, np.arange(108))

    @pytest.mark.parametrize("visual, linguistic, length", [
        (True, False, 104),
        (False, True, 92),
        (False, False, 88),
    ])
    def test_ablated_streams_shorten_sequence(self, vocab, observation, visual, linguistic, length):
        params = make_backbone(vocab, use_visual_cot=visual, use_linguistic_cot=linguistic)
        seq = assemble_input(*observation, params)
        assert params.config.seq_len == seq.length == length
        assert (seq.span(VIS_QUERY) is not None) == visual
        assert (seq.span(LIN_QUERY) is not None) == linguistic

    def test_prefix_independent_of_instruction(self, vocab, backbone, observation):
        image, _ = observation
        a = assemble_input(image, vocab.tokenize("place the red block on the blue plate"), backbone)
        b = assemble_input(image, vocab.tokenize("place the green bread on the yellow bowl"), backbone)
        np.testing.assert_array_equal(a.embeddings.data[:80], b.embeddings.data[:80])
        assert not np.array_equal(a.embeddings.data[80:], b.embeddings.data[80:])

    def test_pad_only_instruction_mask(self, backbone, observation):
        image, _ = observation
        seq = assemble_input(image, [], backbone)
        text = seq.span(TEXT)
        for p in range(text.start, text.stop):
            column = seq.mask[:, p]
            assert column[p]
            assert column.sum() == 1
        # query rows still see the image
        assert seq.mask[107, :80].all()

    def test_real_tokens_stay_visible(self, backbone, observation):
        image, ids = observation
        seq = assemble_input(image, ids, backbone)
        first_text = seq.span(TEXT).start
        assert seq.mask[107, first_text : first_text + len(ids)].all()
        assert not seq.mask[107, first_text + len(ids) : seq.span(TEXT).stop].any()

    def test_instruction_limit(self, backbone, observation):
        image, _ = observation
        with pytest.raises(InputError):
            assemble_input(image, [5] * 25, backbone)


# ──────────────────────────────────────────────
# Forward
# ──────────────────────────────────────────────


class TestBackboneForward:

    def test_output_slices(self, backbone, observation):
        out = encode_observation(*observation, backbone)
        assert out.h_vlm.shape == (108, 16)
        np.testing.assert_array_equal(out.h_vis.data, out.h_vlm.data[64:80])
        np.testing.assert_array_equal(out.h_lin.data, out.h_vlm.data[104:108])

    def test_disabled_streams_have_no_states(self, vocab, observation):
        params = make_backbone(vocab, use_visual_cot=False, use_linguistic_cot=False)
        out = encode_observation(*observation, params)
        assert out.h_vis is None and out.h_lin is None
        assert out.h_vlm.shape == (88, 16)

    def test_visual_states_ignore_instruction(self, vocab, backbone, observation):
        image, _ = observation
        a = encode_observation(image, vocab.tokenize("place the red block on the blue plate"), backbone)
        b = encode_observation(image, vocab.tokenize("place the green bread on the yellow bowl"), backbone)
        np.testing.assert_allclose(a.h_vis.data, b.h_vis.data, atol=1e-12)
        assert np.linalg.norm(a.h_lin.data - b.h_lin.data) > 0

    def test_linguistic_states_see_the_image(self, backbone, observation):
        image, ids = observation
        perturbed = image.copy()
        perturbed[5, 5] += 0.3
        a = encode_observation(image, ids, backbone)
        b = encode_observation(perturbed, ids, backbone)
        assert np.linalg.norm(a.h_lin.data - b.h_lin.data) > 0
        assert np.linalg.norm(a.h_vis.data - b.h_vis.data) > 0

    def test_deterministic(self, backbone, observation):
        a = encode_observation(*observation, backbone)
        b = encode_observation(*observation, backbone)
        assert np.array_equal(a.h_vlm.data, b.h_vlm.data)


class TestForwardCounter:

    def test_counts_each_forward(self, backbone, observation):
        count_forwards_reset()
        seq = assemble_input(*observation, backbone)
        for _ in range(3):
            backbone_forward(seq, backbone)
        assert count_forwards_reset() == 3
        assert count_forwards_reset() == 0

    def test_assembly_alone_is_not_a_forward(self, backbone, observation):
        count_forwards_reset()
        assemble_input(*observation, backbone)
        assert count_forwards_reset() == 0
