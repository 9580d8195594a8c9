"""Shared fixtures: the grammar vocabulary, a tiny model config and a six-episode dataset."""

import pytest

from src.autodiff.rng import Rng
from src.linguistic_cot.decoder import FrozenDecoderParams
from src.linguistic_cot.vocab import Vocabulary
from src.training.config import TrainConfig
from src.world.dataset import fit_feature_stats, generate_episodes, read_dataset, write_dataset


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary.from_grammar()


@pytest.fixture
def frozen_decoder(vocab):
    decoder = FrozenDecoderParams.init(Rng(3), len(vocab))
    decoder.freeze()
    return decoder


@pytest.fixture(scope="session")
def episodes(vocab):
    return generate_episodes(0, 6, vocab, show_progress=False)


@pytest.fixture(scope="session")
def dataset_path(tmp_path_factory, episodes, vocab):
    path = tmp_path_factory.mktemp("data") / "tiny.bin"
    write_dataset(episodes, path, vocab, fit_feature_stats(episodes), seed=0)
    return path


@pytest.fixture(scope="session")
def dataset(dataset_path):
    return read_dataset(dataset_path)


@pytest.fixture
def tiny_config(tmp_path, dataset_path):
    """Four steps of a one-block, 16-wide model: fast enough for every unit test.

    Two decoder steps cannot approach the real perplexity target, so it is
    relaxed here.
    """
    return TrainConfig(
        batch=2, steps=4, d_model=16, n_blocks=1, n_heads=4,
        checkpoint_every=2, log_every=1, sampler_steps=2, decoder_steps=2, decoder_ppl_target=1e4,
        data=str(dataset_path), out_dir=str(tmp_path / "run"),
    )
