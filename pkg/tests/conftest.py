import numpy as np
import pytest
import torch

from spamgan.corpus import build_vocabulary, make_examples, split_and_subsample
from spamgan.synthetic import make_sources
from spamgan.trainer import TrainConfig

torch.set_num_threads(1)


def tiny_bundle(n_labeled=8, n_unlabeled=8, T=16, seed=0, test_fraction=0.25):
    src = make_sources(n_words=12, T=T, n_successors=3, tilt=1.0, p_end=0.2, seed=seed)
    rng = np.random.default_rng(seed)
    t0, l0 = src.sample(n_labeled // 2, 0, rng)
    t1, l1 = src.sample(n_labeled - n_labeled // 2, 1, rng)
    ut, _ = src.sample(n_unlabeled, None, rng)
    vocab = build_vocabulary(t0 + t1 + ut, 16)
    labeled = make_examples(t0 + t1, l0 + l1, vocab, T)
    unlabeled = make_examples(ut, None, vocab, T)
    return split_and_subsample(labeled, test_fraction, 1.0, unlabeled, 1.0, seed=seed, vocabulary=vocab)


def tiny_config(**overrides):
    base = dict(
        T=16, vocab_size=16, z_dim=4, embedding_dim=6, gen_hidden=12, disc_hidden=8, cls_hidden=8,
        batch_size=4, pretrain_g=1, pretrain_d=1, pretrain_c=1, training_epochs=1,
        g_adv_epochs=1, g_mle_epochs=1, d_epochs=1, c_epochs=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def bundle():
    return tiny_bundle()
