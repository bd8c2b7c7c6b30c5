import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spamgan.classifier import (
    Classifier,
    classifier_loss,
    classify,
    cls_critic_loss,
    cls_score_steps,
    entropy,
    predict_from_probs,
)
from spamgan.corpus import END_ID, NONSPAM, PAD_ID, SPAM, START_ID, TokenSequence
from spamgan.discriminator import critic_mse

from oracles import autograd_grads, central_differences, max_relative_error
from test_discriminator import _enumeration_check, random_batch


def toy_cls(vocab=9, hidden=5, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    cls = Classifier(vocab, embedding_dim=4, hidden_size=hidden, num_layers=2, dropout=0.5).to(dtype)
    with torch.no_grad():
        for p in cls.parameters():
            p.uniform_(-0.8, 0.8)
    return cls.eval()


def constant_head(cls, spam_logit):
    with torch.no_grad():
        cls.class_head.weight.zero_()
        cls.class_head.bias.copy_(torch.tensor([0.0, spam_logit], dtype=torch.float64))


def test_zero_logits_give_half():
    cls = toy_cls()
    constant_head(cls, 0.0)
    s = cls_score_steps(cls, TokenSequence.from_ids([START_ID, 4, 5, END_ID]), SPAM)
    assert torch.equal(s.q, torch.full((4,), 0.5, dtype=torch.float64))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_class_scores_normalized(seed):
    cls = toy_cls(seed=seed % 5)
    ids, mask = random_batch(4, 7, 9, seed)
    spam = cls.score_steps(ids, mask, torch.full((4,), SPAM)).q
    ham = cls.score_steps(ids, mask, torch.full((4,), NONSPAM)).q
    assert torch.allclose(spam + ham, torch.ones_like(spam), atol=1e-6)
    sent = cls.sentence_probs(ids, mask)
    assert torch.allclose(sent.sum(-1), torch.ones(4, dtype=sent.dtype), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_prefix_property(seed, t):
    cls = toy_cls(seed=2)
    ids, mask = random_batch(3, 8, 9, seed)
    labels = torch.tensor([0, 1, 1])
    s = cls.score_steps(ids, mask, labels)
    altered = ids.clone()
    altered[:, t + 1 :] = (altered[:, t + 1 :] + 3) % 9
    s2 = cls.score_steps(altered, mask, labels)
    assert torch.equal(s.q[:, : t + 1], s2.q[:, : t + 1])
    assert torch.equal(s.v[:, : t + 2], s2.v[:, : t + 2])


def test_classify_constant_series():
    cls = toy_cls()
    constant_head(cls, math.log(9.0))  # softmax gives 0.9 to spam at every step
    pred, probs = classify(cls, TokenSequence.from_ids([START_ID, 4, 5, END_ID, PAD_ID]))
    assert pred == SPAM
    assert float(probs[SPAM]) == pytest.approx(0.9, abs=1e-12)


def test_tie_breaks_toward_nonspam():
    # q_spam = [0.6, 0.4] averages to 0.5 for both classes
    probs = torch.tensor([[0.4, 0.6], [0.6, 0.4]], dtype=torch.float64).mean(0)
    assert probs.tolist() == [0.5, 0.5]
    assert int(predict_from_probs(probs)) == NONSPAM
    assert int(predict_from_probs(probs, tie_class=SPAM)) == SPAM


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.sampled_from([lambda x: x**3, lambda x: math.exp(5 * x), lambda x: 2 * x - 7]))
def test_prediction_invariant_under_monotone_rescaling(p, f):
    probs = torch.tensor([1 - p, p], dtype=torch.float64)
    mapped = torch.tensor([f(1 - p), f(p)], dtype=torch.float64)
    assert int(predict_from_probs(probs)) == int(predict_from_probs(mapped))


def test_classify_all_pad_is_error():
    with pytest.raises(ValueError):
        classify(toy_cls(), TokenSequence.from_ids([PAD_ID, PAD_ID]))


def _saturate(cls, logit):
    with torch.no_grad():
        cls.class_head.weight.zero_()
        cls.class_head.bias.copy_(torch.tensor([0.0, logit]))


def test_loss_perfect_predictions_is_zero():
    cls = toy_cls()
    _saturate(cls, 60.0)
    ids, mask = random_batch(3, 6, 9, 0)
    spam = torch.full((3,), SPAM)
    assert classifier_loss(cls, ids, mask, spam, ids, mask, spam, beta=1.0).item() < 1e-12


def test_uniform_fake_contribution_vanishes_at_unit_beta():
    cls = toy_cls()
    _saturate(cls, 0.0)
    ids, mask = random_batch(3, 6, 9, 1)
    labels = torch.tensor([0, 1, 0])
    real_only = classifier_loss(cls, ids, mask, labels)
    with_fake = classifier_loss(cls, ids, mask, labels, ids, mask, labels, beta=1.0)
    assert real_only.item() == pytest.approx(math.log(2), abs=1e-12)
    assert (with_fake - real_only).item() == pytest.approx(0.0, abs=1e-12)


def test_beta_zero_is_plain_cross_entropy():
    cls = toy_cls()
    real, rmask = random_batch(3, 6, 9, 2)
    fake, fmask = random_batch(3, 6, 9, 3)
    rl, fl = torch.tensor([0, 1, 1]), torch.tensor([1, 0, 1])
    combined = classifier_loss(cls, real, rmask, rl, fake, fmask, fl, beta=0.0)
    separate = classifier_loss(cls, real, rmask, rl) + classifier_loss(cls, fake, fmask, fl)
    assert combined.item() == pytest.approx(separate.item(), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(0, 1000))
def test_entropy_term_lowers_loss(beta, seed):
    cls = toy_cls(seed=seed % 3)
    real, rmask = random_batch(2, 6, 9, seed)
    fake, fmask = random_batch(2, 6, 9, seed + 1)
    labels = torch.tensor([0, 1])
    with torch.no_grad():
        reg = classifier_loss(cls, real, rmask, labels, fake, fmask, labels, beta=beta)
        plain = classifier_loss(cls, real, rmask, labels, fake, fmask, labels, beta=0.0)
    assert reg.item() <= plain.item()


def test_entropy_natural_log():
    assert entropy(torch.tensor([0.5, 0.5], dtype=torch.float64)).item() == pytest.approx(math.log(2))
    assert entropy(torch.tensor([1.0, 0.0], dtype=torch.float64)).item() == 0.0


def test_classifier_loss_gradient_matches_finite_differences():
    cls = toy_cls(hidden=4)
    real, rmask = random_batch(3, 6, 9, 4)
    fake, fmask = random_batch(3, 6, 9, 5)
    params = cls.main_parameters()
    loss_fn = lambda: classifier_loss(
        cls, real, rmask, torch.tensor([0, 1, 1]), fake, fmask, torch.tensor([1, 1, 0]), beta=0.7
    )
    assert max_relative_error(autograd_grads(loss_fn, params), central_differences(loss_fn, params)) < 1e-4


def test_critic_examples():
    q = torch.tensor([[0.4]], dtype=torch.float64)
    ones = torch.ones(1, 1, dtype=torch.bool)
    assert critic_mse(q, q.clone(), ones).item() == 0.0
    assert critic_mse(q, torch.tensor([[0.9]], dtype=torch.float64), ones).item() == pytest.approx(0.25)


def test_critic_converges_to_enumerated_expectation():
    cls = toy_cls(vocab=7, hidden=8, dtype=torch.float32, seed=4)
    with torch.no_grad():
        cls.embedding.weight.mul_(4.0)
    policy = torch.tensor([0.2, 0.5, 0.3])

    def score(ids):
        s = cls.score_steps(ids, ids != PAD_ID, torch.full((ids.shape[0],), SPAM))
        return s.q, s.v

    loss_fn = lambda ids, mask: cls_critic_loss(cls, ids, mask, torch.full((ids.shape[0],), SPAM))
    learned, exact = _enumeration_check(score, cls.critic_parameters(), loss_fn, policy, seed=1)
    q_all, _ = score(torch.tensor([[START_ID, 4], [START_ID, 5], [START_ID, 6]]))
    assert (q_all[:, 1].max() - q_all[:, 1].min()).item() > 0.1
    assert abs(learned - exact) < 0.02
