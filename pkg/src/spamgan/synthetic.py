"""Two class-conditional bigram Markov sources with exactly computable statistics.

Both classes share a sparse successor structure (which words may follow which);
the classes differ only in how they weight those successors. Sentences end
with a fixed per-step probability, and are truncated to fit a length-``T``
sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MarkovSource:
    initial: np.ndarray  # (2, W) first-word distribution per class
    transitions: np.ndarray  # (2, W, W) word-to-word distribution per class, rows sum to 1
    p_end: float
    T: int

    @property
    def n_words(self) -> int:
        return self.initial.shape[1]

    @staticmethod
    def word(i: int) -> str:
        return f"w{i:02d}"

    def sample_ids(self, c: int, rng: np.random.Generator) -> list[int]:
        # at most T-2 words so that <start> ... <end> fits in T
        words = [rng.choice(self.n_words, p=self.initial[c])]
        while len(words) < self.T - 2 and rng.random() >= self.p_end:
            words.append(rng.choice(self.n_words, p=self.transitions[c, words[-1]]))
        return words

    def sample(self, n: int, c, rng: np.random.Generator) -> tuple[list[str], list[int]]:
        """``n`` sentences as whitespace-joined strings; ``c`` is a class or ``None`` for a 50/50 mix."""
        texts, labels = [], []
        for _ in range(n):
            cls = int(rng.integers(2)) if c is None else int(c)
            texts.append(" ".join(self.word(i) for i in self.sample_ids(cls, rng)))
            labels.append(cls)
        return texts, labels

    def log_likelihood(self, words: list[int], c: int) -> float:
        """Log-probability of a word list (including its ending event) under class ``c``."""
        lp = np.log(self.initial[c, words[0]])
        for a, b in zip(words[:-1], words[1:]):
            lp += np.log1p(-self.p_end) + np.log(self.transitions[c, a, b])
        if len(words) < self.T - 2:
            lp += np.log(self.p_end)
        return float(lp)

    def bayes_predict(self, words: list[int]) -> int:
        return int(self.log_likelihood(words, 1) > self.log_likelihood(words, 0))

    def _expected_nll_and_tokens(self, c: int) -> tuple[float, float]:
        """Exact ``E[NLL]`` and ``E[#predicted tokens]`` of a class-``c`` sequence.

        Predicted tokens are every position after ``<start>``: the words and
        the closing ``<end>``. Computed by forward recursion over the
        distribution of the previous word.
        """
        W, L = self.n_words, self.T - 2
        pe = self.p_end

        def H(p):
            p = p[p > 0]
            return float(-(p * np.log(p)).sum())

        row_h = np.array([H(self.transitions[c, i]) for i in range(W)])
        h_end = H(np.array([pe, 1 - pe]))

        alive = self.initial[c].copy()  # distribution of the last emitted word, times P(still going)
        exp_nll = H(self.initial[c])
        exp_tokens = 1.0
        for k in range(1, L):
            # after k words: either <end> (prob pe) or another word
            mass = alive.sum()
            exp_nll += mass * h_end + (1 - pe) * float(alive @ row_h)
            exp_tokens += mass
            alive = (1 - pe) * alive @ self.transitions[c]
        # after L words <end> follows with certainty: one more token, zero entropy
        exp_tokens += alive.sum()
        return exp_nll, exp_tokens

    def token_perplexity(self, c: int) -> float:
        """Exact ``exp(E[NLL] / E[#predicted tokens])`` of class-``c`` sequences under the source itself."""
        nll, tokens = self._expected_nll_and_tokens(c)
        return float(np.exp(nll / tokens))

    def mixture_perplexity(self, prior=(0.5, 0.5)) -> float:
        """Per-token perplexity of a class mixture scored with the true class known."""
        terms = [self._expected_nll_and_tokens(c) for c in (0, 1)]
        nll = sum(p * t[0] for p, t in zip(prior, terms))
        tokens = sum(p * t[1] for p, t in zip(prior, terms))
        return float(np.exp(nll / tokens))


def make_sources(
    n_words: int = 50,
    T: int = 20,
    n_successors: int = 6,
    tilt: float = 1.0,
    p_end: float = 0.0,
    seed: int = 0,
) -> MarkovSource:
    """Shared sparse support, class-specific reweighting by ``exp(±tilt * s)`` with random signs ``s``."""
    rng = np.random.default_rng(seed)
    base = np.zeros((n_words, n_words))
    signs = np.zeros((n_words, n_words))
    for i in range(n_words):
        succ = rng.choice(n_words, n_successors, replace=False)
        base[i, succ] = rng.dirichlet(np.full(n_successors, 2.0))
        s = np.array([1.0, -1.0] * (n_successors // 2) + [0.0] * (n_successors % 2))
        signs[i, succ] = rng.permutation(s)
    trans = np.stack([base * np.exp(tilt * signs), base * np.exp(-tilt * signs)])
    trans /= trans.sum(-1, keepdims=True)
    initial = np.full((2, n_words), 1.0 / n_words)
    return MarkovSource(initial, trans, p_end, T)
