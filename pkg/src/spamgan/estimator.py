"""scikit-learn style wrappers around the training pipeline."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .corpus import (
    CLASS_NAMES,
    GENERATED,
    NONSPAM,
    SPAM,
    DatasetBundle,
    TokenSequence,
    build_vocabulary,
    decode,
    encode,
    make_examples,
    parse_label,
)
from .generator import sample_context
from .metrics import perplexity as _perplexity
from .trainer import (
    TrainConfig,
    adversarial_train,
    load_checkpoint,
    predict_proba as _predict_proba,
    pretrain,
    save_checkpoint,
)

# TrainConfig sections that become estimator hyperparameters
ESTIMATOR_SECTIONS = ("model", "optimizer", "objective", "schedule")


def _check_texts(X, name="X") -> list[str]:
    if isinstance(X, str):
        raise ValueError(f"{name} must be a sequence of strings, not a single string")
    try:
        texts = list(X)
    except TypeError as err:
        raise ValueError(f"{name} must be an iterable of strings") from err
    for t in texts:
        if not isinstance(t, str):
            raise ValueError(f"{name} must contain only strings, found {type(t).__name__}")
    return texts


def _check_labels(y) -> np.ndarray:
    labels = np.asarray([parse_label(v) for v in np.asarray(y, dtype=object).ravel()], dtype=np.int64)
    if labels.size == 0:
        raise ValueError("y is empty")
    return labels


class SequenceEncoder(TransformerMixin, BaseEstimator):
    """Learns a frequency-ranked vocabulary and maps texts to ``(n, T)`` id arrays."""

    def __init__(self, T=128, vocab_size=10000):
        self.T = T
        self.vocab_size = vocab_size

    def fit(self, X, y=None):
        self.vocabulary_ = build_vocabulary(_check_texts(X), self.vocab_size)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "vocabulary_")
        texts = _check_texts(X)
        out = np.zeros((len(texts), self.T), dtype=np.int64)
        for i, t in enumerate(texts):
            out[i] = encode(t, self.vocabulary_, self.T).ids
        return out

    def inverse_transform(self, ids) -> list[str]:
        check_is_fitted(self, "vocabulary_")
        return [decode(TokenSequence.from_ids([int(v) for v in row]), self.vocabulary_) for row in np.asarray(ids)]


class SpamGANClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised GAN text classifier.

    ``fit(X, y, X_unlabeled)`` pre-trains the generator, discriminator and
    classifier, then runs the interleaved adversarial loop. Hyperparameters
    mirror :class:`~spamgan.trainer.TrainConfig`.
    """

    def __init__(
        self,
        T=128,
        vocab_size=10000,
        z_dim=50,
        embedding_dim=50,
        gen_hidden=1024,
        disc_hidden=512,
        cls_hidden=512,
        num_layers=2,
        dropout=0.5,
        gen_lr=1e-3,
        gen_weight_decay=1e-7,
        disc_lr=1e-4,
        disc_weight_decay=1e-4,
        cls_lr=1e-4,
        cls_weight_decay=1e-4,
        clip_norm=5.0,
        beta=1.0,
        alpha_offset=0.0,
        reward_whitening=False,
        strict_eq3=False,
        class_prior=(0.5, 0.5),
        tie_class=NONSPAM,
        positive_class=SPAM,
        sample_temperature=1.0,
        batch_size=32,
        pretrain_g=40,
        pretrain_d=10,
        pretrain_c=20,
        training_epochs=30,
        g_adv_epochs=1,
        g_mle_epochs=1,
        d_epochs=1,
        c_epochs=1,
        steps_per_epoch=None,
        mle_labeled_share=None,
        checkpoint_every=0,
        seed=0,
        checkpoint_dir=None,
        metrics_path=None,
        verify_blocks=False,
    ):
        for name, value in list(locals().items()):
            if name not in ("self", "__class__"):
                setattr(self, name, value)

    @classmethod
    def from_config(cls, config: TrainConfig, **overrides):
        names = cls._get_param_names()
        params = {k: v for k, v in config.to_dict().items() if k in names}
        params["class_prior"] = tuple(params["class_prior"])
        params.update(overrides)
        return cls(**params)

    def to_config(self) -> TrainConfig:
        params = self.get_params()
        params["eval_every_epoch"] = False
        return TrainConfig(**params)

    # -------------------------------------------------------------- fitting

    def _train(self, config: TrainConfig, bundle: DatasetBundle):
        state = pretrain(config, bundle)
        return adversarial_train(config, bundle, state)

    def fit(self, X, y, X_unlabeled=None):
        texts = _check_texts(X)
        labels = _check_labels(y)
        check_consistent_length(texts, labels)
        extra = _check_texts(X_unlabeled, "X_unlabeled") if X_unlabeled is not None else []
        config = self.to_config()
        vocab = build_vocabulary(texts + extra, config.vocab_size)
        bundle = DatasetBundle(
            labeled_train=tuple(make_examples(texts, labels, vocab, config.T)),
            labeled_test=(),
            unlabeled=tuple(make_examples(extra, None, vocab, config.T)),
            vocabulary=vocab,
            split_seed=config.seed,
        )
        self.state_ = self._train(config, bundle)
        self.vocabulary_ = vocab
        self.classes_ = np.array([NONSPAM, SPAM])
        return self

    # ----------------------------------------------------------- inference

    def _encode(self, X):
        texts = _check_texts(X)
        ids = torch.tensor([encode(t, self.vocabulary_, self.state_.config.T).ids for t in texts],
                           dtype=torch.long).reshape(len(texts), self.state_.config.T)
        return ids, ids != 0

    def predict_proba(self, X) -> np.ndarray:
        """Sentence-level class distribution, columns ordered as ``classes_``."""
        check_is_fitted(self, "state_")
        ids, mask = self._encode(X)
        return _predict_proba(self.state_, ids, mask).numpy().astype(np.float64)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        tie = self.state_.config.tie_class
        other = 1 - tie
        return np.where(proba[:, other] > proba[:, tie], other, tie)

    def perplexity(self, X, y) -> float:
        """Generator perplexity of ``X`` under teacher forcing, conditioned on ``y``."""
        check_is_fitted(self, "state_")
        ids, mask = self._encode(X)
        labels = _check_labels(y)
        check_consistent_length(ids, labels)
        return _perplexity(self.state_.generator, ids, mask, torch.as_tensor(labels))

    def generate(self, n: int, classes=None, temperature: float = 1.0, seed: int = 0) -> list[dict]:
        """Sample ``n`` sentences; returns ``{class, text, logprobs}`` records."""
        check_is_fitted(self, "state_")
        cfg = self.state_.config
        rng = torch.Generator().manual_seed(seed)
        if classes is not None:
            classes = torch.as_tensor(np.broadcast_to(np.asarray(classes), (n,)).copy(), dtype=torch.long)
        ctx = sample_context(n, cfg.class_prior, cfg.z_dim, rng, classes)
        batch = self.state_.generator.generate(ctx, cfg.T, temperature, rng)
        out = []
        for seq, c, lp, m in zip(batch.sequences(), batch.context.c.tolist(), batch.step_logprobs,
                                 batch.action_mask):
            out.append({
                "class": CLASS_NAMES[c],
                "source": GENERATED,
                "text": decode(seq, self.vocabulary_),
                "logprobs": [round(float(v), 6) for v in lp[m]],
            })
        return out

    # ---------------------------------------------------------- persistence

    def save(self, path) -> None:
        check_is_fitted(self, "state_")
        save_checkpoint(self.state_, path)

    @classmethod
    def load(cls, path) -> "SpamGANClassifier":
        state = load_checkpoint(path)
        est = cls.from_config(state.config)
        est.state_ = state
        est.vocabulary_ = state.vocabulary
        est.classes_ = np.array([NONSPAM, SPAM])
        return est


class BaseSequenceClassifier(SpamGANClassifier):
    """The recurrent classifier alone, trained on labeled data only.

    Shares every hyperparameter with :class:`SpamGANClassifier` but skips the
    generator, the discriminator and the adversarial loop; ``pretrain_c`` sets
    its number of epochs. Unlabeled data passed to ``fit`` is ignored.
    """

    def _train(self, config: TrainConfig, bundle: DatasetBundle):
        config = config.replace(pretrain_g=0, pretrain_d=0, training_epochs=0)
        bundle = DatasetBundle(bundle.labeled_train, (), (), bundle.vocabulary, bundle.split_seed)
        return pretrain(config, bundle)
