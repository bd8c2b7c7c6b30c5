import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from spamgan.corpus import END_ID, PAD_ID, START_ID, UNK_ID
from spamgan.generator import Generator, sample_context
from spamgan.nn import make_optimizer
from spamgan.rl import (
    advantages,
    alpha_schedule,
    blend,
    policy_gradient_loss,
    policy_gradient_update,
    sentence_reward,
    whiten,
)


def test_blend_examples():
    assert blend(0.5, 0.5) == 0.5
    assert blend(0.0, 0.7) == 0.0
    assert blend(0.0, 0.0) == 0.0
    assert blend(0.8, 0.4) == pytest.approx(0.53333333, abs=1e-8)
    t = blend(torch.tensor([0.0, 0.8]), torch.tensor([0.0, 0.4]))
    assert t.tolist() == pytest.approx([0.0, 0.5333333], abs=1e-6)


def test_sentence_reward_examples():
    assert sentence_reward(1.0, 1.0) == 1.0
    assert sentence_reward(0.9, 0.1) == pytest.approx(0.18)


def test_reward_bounds_sweep():
    rng = np.random.default_rng(0)
    a, b = rng.random(10_000), rng.random(10_000)
    r = blend(torch.tensor(a, dtype=torch.float64), torch.tensor(b, dtype=torch.float64)).numpy()
    assert np.all(np.minimum(a, b) <= r + 1e-15)
    assert np.all(r <= (a + b) / 2 + 1e-15)


@settings(max_examples=300)
@given(*[st.floats(0, 1, allow_subnormal=False)] * 3)
def test_blend_properties(a, b, c):
    assert blend(a, b) == pytest.approx(blend(b, a), abs=1e-15)
    assert blend(a, a) == a
    if a + b > 0:
        assert min(a, b) - 1e-12 <= blend(a, b) <= (a + b) / 2 + 1e-12
        if a != b:
            assert blend(a, b) < (a + b) / 2
    if c > a and b > 0:
        assert blend(c, b) >= blend(a, b) - 1e-15


def test_advantages_worked_example():
    tr = advantages([0.8, 0.6], [0.4, 0.6], [0.5, 0.5], [0.5, 0.5], T=2)
    assert tr.blended_q.tolist() == pytest.approx([0.53333, 0.6], abs=1e-4)
    assert tr.blended_v.tolist() == pytest.approx([0.5, 0.5])
    assert tr.alpha.tolist() == [1.0, 0.0]
    assert tr.advantage.tolist() == pytest.approx([0.03333, 0.0], abs=1e-4)


def test_perfect_baseline_zero_advantage():
    q = torch.rand(3, 6)
    c = torch.rand(3, 6)
    tr = advantages(q, c, q, c)
    assert torch.equal(tr.advantage, torch.zeros(3, 6))


def test_alpha_schedule():
    a = alpha_schedule(7)
    assert bool((a[1:] < a[:-1]).all()) and a[-1] == 0 and a[0] == 6
    assert alpha_schedule(3, offset=1.0).tolist() == [3.0, 2.0, 1.0]


def test_advantages_errors_and_mask():
    with pytest.raises(ValueError):
        advantages([0.1, 0.2], [0.1], [0.1, 0.2], [0.1, 0.2])
    with pytest.raises(ValueError):
        advantages([0.1, 0.2], [0.1, 0.2], [0.1, 0.2], [0.1, 0.2], T=3)
    tr = advantages([0.9, 0.9, 0.9], [0.9] * 3, [0.1] * 3, [0.1] * 3, mask=[True, True, False])
    assert tr.advantage[2] == 0 and tr.advantage[0] > 0


def test_whiten():
    adv = torch.tensor([[1.0, 2.0, 3.0, 9.0]])
    mask = torch.tensor([[True, True, True, False]])
    w = whiten(adv, mask)
    assert w[0, 3] == 0
    assert float(w[mask].mean()) == pytest.approx(0.0, abs=1e-6)


def bandit_generator(seed=0):
    # vocabulary of 5 leaves exactly three emittable tokens: <end>, <unk> and id 4
    torch.manual_seed(seed)
    return Generator(5, embedding_dim=4, hidden_size=8, num_layers=2, z_dim=2, dropout=0.5)


ACTIONS = torch.tensor([4, END_ID, UNK_ID])
REWARDS = {4: 1.0, END_ID: 0.0, UNK_ID: 0.0}


def bandit_advantage(batch):
    r = torch.tensor([REWARDS[int(y)] for y in batch.ids[:, 1]])
    adv = torch.zeros(batch.ids.shape)
    adv[:, 1] = r
    return adv


def first_step_probs(gen, context):
    gen.eval()
    with torch.no_grad():
        logits = gen(torch.tensor([[START_ID, PAD_ID]] * len(context.c)), context)[:, 0]
    return torch.softmax(logits, -1)


def test_null_update_only_decays():
    gen = bandit_generator()
    opt = make_optimizer(gen.parameters(), 1e-3, 1e-7)
    rng = torch.Generator().manual_seed(0)
    batch = gen.generate(sample_context(8, (0.5, 0.5), 2, rng), 4, rng=rng)
    before = [p.detach().clone() for p in gen.parameters()]
    assert policy_gradient_update(gen, batch, torch.zeros(batch.ids.shape), opt)
    for p, b in zip(gen.parameters(), before):
        assert torch.allclose(p.detach(), b * (1 - 1e-10), rtol=0, atol=1e-12)


def test_bandit_converges_to_best_token():
    gen = bandit_generator()
    opt = make_optimizer(gen.parameters(), 1e-3, 1e-7)
    rng = torch.Generator().manual_seed(0)
    probe = sample_context(64, (0.5, 0.5), 2, torch.Generator().manual_seed(99))
    for step in range(300):
        batch = gen.generate(sample_context(64, (0.5, 0.5), 2, rng), 2, rng=rng)
        assert policy_gradient_update(gen, batch, bandit_advantage(batch), opt)
        if float(first_step_probs(gen, probe)[:, 4].mean()) > 0.95:
            break
    assert float(first_step_probs(gen, probe)[:, 4].mean()) > 0.95


def test_loss_gradient_is_score_function_estimate():
    gen = bandit_generator().double()
    rng = torch.Generator().manual_seed(3)
    ctx = sample_context(50, (0.5, 0.5), 2, rng)
    ctx.z = ctx.z.double()
    batch = gen.generate(ctx, 2, rng=rng)
    adv = bandit_advantage(batch).double()
    gen.zero_grad()
    policy_gradient_loss(gen.eval(), batch, adv).backward()
    probs = first_step_probs(gen, ctx)
    onehot = torch.nn.functional.one_hot(batch.ids[:, 1], 5).double()
    expected = -(adv[:, 1:2] * (onehot - probs)).mean(0)
    assert torch.allclose(gen.output.bias.grad, expected, atol=1e-12)


def test_constant_baseline_keeps_estimator_unbiased():
    gen = bandit_generator().double().eval()
    rng = torch.Generator().manual_seed(5)
    n = 10_000
    ctx = sample_context(1, (0.5, 0.5), 2, rng, classes=torch.tensor([1]))
    ctx.z = ctx.z.double()
    pi = first_step_probs(gen, ctx)[0]
    y = torch.multinomial(pi, n, replacement=True, generator=rng)
    r = torch.tensor([REWARDS.get(int(k), 0.0) for k in range(5)], dtype=torch.float64)
    exact = pi * (r - (pi * r).sum())  # d E[r] / d logits
    score = torch.nn.functional.one_hot(y, 5).double() - pi
    for baseline in (0.0, 0.5, 0.9):
        samples = (r[y] - baseline).unsqueeze(1) * score
        mean, se = samples.mean(0), samples.std(0) / n**0.5
        live = ACTIONS
        assert bool(((mean[live] - exact[live]).abs() <= 2 * se[live] + 1e-12).all()), baseline
