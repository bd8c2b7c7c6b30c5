import dataclasses

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from spamgan.corpus import NONSPAM, SPAM
from spamgan.estimator import ESTIMATOR_SECTIONS, BaseSequenceClassifier, SequenceEncoder, SpamGANClassifier
from spamgan.synthetic import make_sources
from spamgan.trainer import TrainConfig

TINY = dict(T=12, vocab_size=20, z_dim=4, embedding_dim=6, gen_hidden=12, disc_hidden=8, cls_hidden=8,
            batch_size=4, pretrain_g=1, pretrain_d=1, pretrain_c=1, training_epochs=1)


@pytest.fixture(scope="module")
def texts():
    src = make_sources(n_words=14, T=12, n_successors=3, p_end=0.2, seed=0)
    rng = np.random.default_rng(0)
    x, y = src.sample(12, None, rng)
    u, _ = src.sample(8, None, rng)
    return x, y, u


def test_hyperparameters_mirror_config():
    names = set(SpamGANClassifier().get_params())
    expected = {f.name for f in dataclasses.fields(TrainConfig) if f.metadata["section"] in ESTIMATOR_SECTIONS}
    assert expected <= names
    assert names - expected == {"seed", "checkpoint_dir", "metrics_path", "verify_blocks"}
    defaults = SpamGANClassifier().to_config()
    assert defaults == TrainConfig(eval_every_epoch=False)


def test_clone_and_set_params():
    est = SpamGANClassifier(beta=0.5)
    twin = clone(est).set_params(gen_lr=0.01)
    assert twin.beta == 0.5 and twin.gen_lr == 0.01


def test_from_config_round_trip():
    cfg = TrainConfig(**TINY, eval_every_epoch=False)
    assert SpamGANClassifier.from_config(cfg).to_config() == cfg


def test_sequence_encoder(texts):
    x, _, _ = texts
    enc = SequenceEncoder(T=12, vocab_size=30).fit(x)
    ids = enc.transform(x)
    assert ids.shape == (len(x), 12) and ids.dtype == np.int64
    assert enc.inverse_transform(ids)[0] == " ".join(x[0].split()[:10])
    with pytest.raises(NotFittedError):
        SequenceEncoder().transform(x)


def test_input_validation(texts):
    x, y, _ = texts
    est = SpamGANClassifier(**TINY)
    with pytest.raises(ValueError):
        est.fit("one string", [1])
    with pytest.raises(ValueError):
        est.fit(x, y[:-1])
    with pytest.raises(ValueError):
        est.fit([1, 2], [0, 1])
    with pytest.raises(NotFittedError):
        est.predict(x)


def test_fit_predict_generate(tmp_path, texts):
    x, y, u = texts
    est = SpamGANClassifier(**TINY).fit(x, ["spam" if c else "truthful" for c in y], X_unlabeled=u)
    assert list(est.classes_) == [NONSPAM, SPAM]
    proba = est.predict_proba(x)
    assert proba.shape == (len(x), 2) and np.allclose(proba.sum(1), 1, atol=1e-6)
    assert set(est.predict(x)) <= {0, 1}
    assert 0 <= est.score(x, y) <= 1
    assert est.perplexity(x, y) >= 1
    samples = est.generate(5, classes=SPAM, seed=1)
    assert len(samples) == 5 and all(s["class"] == "spam" for s in samples)
    assert all(len(s["logprobs"]) >= 1 for s in samples)

    est.save(tmp_path / "m.ckpt")
    again = SpamGANClassifier.load(tmp_path / "m.ckpt")
    assert np.array_equal(again.predict_proba(x), proba)
    assert again.get_params()["T"] == 12


def test_fit_is_deterministic(texts):
    x, y, u = texts
    a = SpamGANClassifier(**TINY).fit(x, y, u).predict_proba(x)
    b = SpamGANClassifier(**TINY).fit(x, y, u).predict_proba(x)
    assert np.array_equal(a, b)


def test_base_classifier_trains_only_the_classifier(texts):
    x, y, u = texts
    base = BaseSequenceClassifier(**{**TINY, "pretrain_c": 3}).fit(x, y, u)
    c = base.state_.counters
    assert (c["pretrain_g"], c["pretrain_d"], c["pretrain_c"], c["training_epochs"]) == (0, 0, 3, 0)
    assert base.predict(x).shape == (len(x),)
