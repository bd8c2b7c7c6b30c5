"""Pre-training and the interleaved adversarial training loop, with checkpoints."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .classifier import Classifier, classifier_loss, cls_critic_loss, predict_from_probs
from .corpus import NONSPAM, SPAM, DatasetBundle, Vocabulary
from .discriminator import Discriminator, critic_mse, disc_loss, sentence_score
from .generator import GeneratedBatch, Generator, mle_update, sample_context
from .metrics import accuracy, f1, perplexity
from .nn import NonFiniteError, clipped_step, make_optimizer, param_digest
from .rl import advantages, policy_gradient_update, sentence_reward, whiten

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_MAGIC = b"SPAMGAN-CHECKPOINT\n"


def _f(default, section, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass
class TrainConfig:
    # model
    T: int = _f(128, "model")
    vocab_size: int = _f(10000, "model")
    z_dim: int = _f(50, "model")
    embedding_dim: int = _f(50, "model")
    gen_hidden: int = _f(1024, "model")
    disc_hidden: int = _f(512, "model")
    cls_hidden: int = _f(512, "model")
    num_layers: int = _f(2, "model")
    dropout: float = _f(0.5, "model")
    # optimizer
    gen_lr: float = _f(1e-3, "optimizer")
    gen_weight_decay: float = _f(1e-7, "optimizer")
    disc_lr: float = _f(1e-4, "optimizer")
    disc_weight_decay: float = _f(1e-4, "optimizer")
    cls_lr: float = _f(1e-4, "optimizer")
    cls_weight_decay: float = _f(1e-4, "optimizer")
    clip_norm: float = _f(5.0, "optimizer")
    # objective
    beta: float = _f(1.0, "objective")
    alpha_offset: float = _f(0.0, "objective")
    reward_whitening: bool = _f(False, "objective")
    strict_eq3: bool = _f(False, "objective")
    class_prior: tuple = _f((0.5, 0.5), "objective")
    tie_class: int = _f(NONSPAM, "objective")
    positive_class: int = _f(SPAM, "objective")
    sample_temperature: float = _f(1.0, "objective")
    # schedule
    batch_size: int = _f(32, "schedule")
    pretrain_g: int = _f(40, "schedule")
    pretrain_d: int = _f(10, "schedule")
    pretrain_c: int = _f(20, "schedule")
    training_epochs: int = _f(30, "schedule")
    g_adv_epochs: int = _f(1, "schedule")
    g_mle_epochs: int = _f(1, "schedule")
    d_epochs: int = _f(1, "schedule")
    c_epochs: int = _f(1, "schedule")
    steps_per_epoch: Optional[int] = _f(None, "schedule")
    mle_labeled_share: Optional[float] = _f(None, "schedule")
    checkpoint_every: int = _f(0, "schedule")
    # data
    labeled_path: Optional[str] = _f(None, "data")
    unlabeled_path: Optional[str] = _f(None, "data")
    test_fraction: float = _f(0.2, "data")
    labeled_fraction: float = _f(1.0, "data")
    unlabeled_fraction: float = _f(1.0, "data")
    # run
    seed: int = _f(0, "run")
    split_seed: int = _f(0, "run")
    checkpoint_dir: Optional[str] = _f(None, "run")
    metrics_path: Optional[str] = _f(None, "run")
    eval_every_epoch: bool = _f(True, "run")
    verify_blocks: bool = _f(False, "run")

    def __post_init__(self):
        self.class_prior = tuple(float(p) for p in self.class_prior)
        for name in ("pretrain_g", "pretrain_d", "pretrain_c", "training_epochs", "g_adv_epochs",
                     "g_mle_epochs", "d_epochs", "c_epochs", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.T < 3:
            raise ValueError("T must be at least 3")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["class_prior"] = list(self.class_prior)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def parse_config_value(f: dataclasses.Field, raw: str):
    text = raw.strip()
    default = f.default
    if text.lower() in ("none", "") and (default is None or "Optional" in str(f.type)):
        return None
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{f.name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.strip("()[]").split(",") if x.strip())
    if isinstance(default, int) or "int" in str(f.type):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def load_config(path, **overrides) -> TrainConfig:
    """Read a ``key = value`` INI file with sections ``[model]``, ``[optimizer]``,
    ``[objective]``, ``[schedule]``, ``[data]`` and ``[run]``."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValueError(f"unknown config key {section}.{key}")
            expected = fields[key].metadata["section"]
            if section != expected:
                raise ValueError(f"config key {key} belongs in [{expected}], found in [{section}]")
            values[key] = parse_config_value(fields[key], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def dump_config(config: TrainConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for f in dataclasses.fields(TrainConfig):
        section = f.metadata["section"]
        if not parser.has_section(section):
            parser.add_section(section)
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        parser.set(section, f.name, "none" if value is None else str(value))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


class TrainingAborted(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class RunState:
    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    classifier: Classifier
    optimizers: dict
    rng: torch.Generator
    counters: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    vocabulary: Optional[Vocabulary] = None

    def modules(self) -> dict:
        return {"generator": self.generator, "discriminator": self.discriminator, "classifier": self.classifier}

    def digests(self) -> dict:
        """Parameter hashes for each of the five parameter sets."""
        d, c = self.discriminator, self.classifier
        return {
            "generator": param_digest(self.generator),
            "discriminator": _digest_params(d.main_parameters()),
            "disc_critic": _digest_params(d.critic_parameters()),
            "classifier": _digest_params(c.main_parameters()),
            "cls_critic": _digest_params(c.critic_parameters()),
        }


def _digest_params(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def init_state(config: TrainConfig, vocabulary: Optional[Vocabulary] = None) -> RunState:
    vocab_size = vocabulary.size if vocabulary is not None else config.vocab_size
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        gen = Generator(vocab_size, config.embedding_dim, config.gen_hidden, config.num_layers,
                        config.z_dim, config.dropout)
        disc = Discriminator(vocab_size, config.embedding_dim, config.disc_hidden, config.num_layers,
                             config.dropout)
        cls = Classifier(vocab_size, config.embedding_dim, config.cls_hidden, config.num_layers,
                         config.dropout)
    optimizers = {
        "generator": make_optimizer(gen.parameters(), config.gen_lr, config.gen_weight_decay),
        "discriminator": make_optimizer(disc.main_parameters(), config.disc_lr, config.disc_weight_decay),
        "disc_critic": make_optimizer(disc.critic_parameters(), config.disc_lr, config.disc_weight_decay),
        "classifier": make_optimizer(cls.main_parameters(), config.cls_lr, config.cls_weight_decay),
        "cls_critic": make_optimizer(cls.critic_parameters(), config.cls_lr, config.cls_weight_decay),
    }
    rng = torch.Generator().manual_seed(config.seed + 1)
    counters = {k: 0 for k in ("pretrain_g", "pretrain_d", "pretrain_c", "training_epochs",
                               "g_adv", "g_mle", "d", "c", "pg_skipped", "block_checks")}
    return RunState(config, gen, disc, cls, optimizers, rng, counters, [], vocabulary)


# ---------------------------------------------------------------- data pools


class _Pool:
    def __init__(self, examples):
        examples = list(examples)
        self.n = len(examples)
        if examples:
            self.ids = torch.tensor([e.sequence.ids for e in examples], dtype=torch.long)
        else:
            self.ids = torch.zeros(0, 0, dtype=torch.long)
        self.mask = self.ids != 0
        self.labels = torch.tensor([-1 if e.label is None else e.label for e in examples], dtype=torch.long)

    def __len__(self):
        return self.n

    @staticmethod
    def concat(a: "_Pool", b: "_Pool") -> "_Pool":
        if not len(b):
            return a
        if not len(a):
            return b
        out = _Pool([])
        out.n = a.n + b.n
        out.ids = torch.cat([a.ids, b.ids])
        out.mask = torch.cat([a.mask, b.mask])
        out.labels = torch.cat([a.labels, b.labels])
        return out

    def sample(self, k: int, rng: torch.Generator):
        idx = torch.randperm(self.n, generator=rng)[: min(k, self.n)]
        return self.ids[idx], self.mask[idx], self.labels[idx]

    def take(self, idx):
        return self.ids[idx], self.mask[idx], self.labels[idx]

    def epoch(self, batch_size: int, rng: torch.Generator):
        perm = torch.randperm(self.n, generator=rng)
        for i in range(0, self.n, batch_size):
            idx = perm[i : i + batch_size]
            yield self.ids[idx], self.mask[idx], self.labels[idx]


def _mle_batches(labeled: _Pool, unlabeled: _Pool, cfg: TrainConfig, n_batches, rng):
    """Generator MLE batches over D_L and D_U.

    With ``mle_labeled_share`` unset every batch is a uniform draw from the
    union (a full shuffled pass when ``n_batches`` is None); otherwise that
    share of each batch comes from the labeled set.
    """
    union = _Pool.concat(labeled, unlabeled)
    share = cfg.mle_labeled_share
    if share is None or not len(unlabeled) or not len(labeled):
        if n_batches is None:
            yield from union.epoch(cfg.batch_size, rng)
        else:
            for _ in range(n_batches):
                yield union.sample(cfg.batch_size, rng)
        return
    if n_batches is None:
        n_batches = math.ceil(len(union) / cfg.batch_size)
    k_lab = max(1, min(cfg.batch_size, int(round(share * cfg.batch_size))))
    for _ in range(n_batches):
        a = labeled.sample(k_lab, rng)
        b = unlabeled.sample(cfg.batch_size - k_lab, rng)
        yield tuple(torch.cat([x, y]) for x, y in zip(a, b))


def _assign_classes(labels: torch.Tensor, prior, rng) -> torch.Tensor:
    # unlabeled sentences (label -1) get a fresh draw from the class prior
    missing = labels < 0
    if not bool(missing.any()):
        return labels
    draws = torch.multinomial(torch.as_tensor(prior, dtype=torch.float64), int(missing.sum()),
                              replacement=True, generator=rng)
    out = labels.clone()
    out[missing] = draws
    return out


# ---------------------------------------------------------------- helpers


class _Recorder:
    def __init__(self, state: RunState):
        self.state = state
        path = state.config.metrics_path
        self.path = Path(path) if path else None

    def __call__(self, epoch, phase, name, value):
        rec = {"epoch": epoch, "phase": phase, "name": name, "value": float(value)}
        self.state.metrics.append(rec)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")


class _BlockGuard:
    """Asserts that components outside the active phase keep their parameters."""

    def __init__(self, state: RunState, active: tuple):
        self.state = state
        self.active = active

    def __enter__(self):
        if self.state.config.verify_blocks:
            self.before = self.state.digests()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None or not self.state.config.verify_blocks:
            return False
        after = self.state.digests()
        changed = [k for k in after if after[k] != self.before[k] and k not in self.active]
        if changed:
            raise AssertionError(f"phase {self.active} modified frozen parameters: {changed}")
        self.state.counters["block_checks"] += 1
        return False


def _fake_batch(state: RunState, n: int, classes=None) -> GeneratedBatch:
    cfg = state.config
    ctx = sample_context(n, cfg.class_prior, cfg.z_dim, state.rng, classes)
    return state.generator.generate(ctx, cfg.T, cfg.sample_temperature, state.rng)


def _steps(cfg: TrainConfig, data: DatasetBundle) -> int:
    if cfg.steps_per_epoch:
        return cfg.steps_per_epoch
    return max(1, math.ceil(len(data.labeled_train) / cfg.batch_size))


def _disc_step(state: RunState, real_ids, real_mask) -> tuple[float, float]:
    cfg = state.config
    disc = state.discriminator
    fake = _fake_batch(state, real_ids.shape[0])
    disc.train()
    loss = disc_loss(disc, real_ids, real_mask, fake.ids, fake.mask, cfg.strict_eq3, state.rng)
    clipped_step(state.optimizers["discriminator"], loss, cfg.clip_norm)
    disc.eval()
    s = disc.score_steps(fake.ids, fake.mask)
    crit = critic_mse(s.q, s.v, s.mask)
    clipped_step(state.optimizers["disc_critic"], crit, cfg.clip_norm)
    return loss.item(), crit.item()


def _cls_step(state: RunState, real_ids, real_mask, real_labels, with_fake: bool) -> tuple[float, float]:
    cfg = state.config
    cls = state.classifier
    fake = _fake_batch(state, real_ids.shape[0])
    cls.train()
    if with_fake:
        loss = classifier_loss(cls, real_ids, real_mask, real_labels, fake.ids, fake.mask,
                               fake.context.c, cfg.beta, cfg.strict_eq3, state.rng)
    else:
        loss = classifier_loss(cls, real_ids, real_mask, real_labels, strict_eq3=cfg.strict_eq3, rng=state.rng)
    clipped_step(state.optimizers["classifier"], loss, cfg.clip_norm)
    cls.eval()
    crit = cls_critic_loss(cls, fake.ids, fake.mask, fake.context.c)
    clipped_step(state.optimizers["cls_critic"], crit, cfg.clip_norm)
    return loss.item(), crit.item()


def _mle_step(state: RunState, ids, mask, labels) -> float:
    cfg = state.config
    classes = _assign_classes(labels, cfg.class_prior, state.rng)
    return mle_update(state.generator, state.optimizers["generator"], ids, mask, classes,
                      cfg.clip_norm, state.rng)


def _pg_step(state: RunState) -> dict:
    cfg = state.config
    disc, cls = state.discriminator, state.classifier
    batch = _fake_batch(state, cfg.batch_size)
    disc.eval()
    cls.eval()
    with torch.no_grad():
        sd = disc.score_steps(batch.ids, batch.mask)
        sc = cls.score_steps(batch.ids, batch.mask, batch.context.c)
        trace = advantages(sd.q, sc.q, sd.v, sc.v, cfg.T, batch.action_mask, cfg.alpha_offset)
        adv = trace.advantage
        if cfg.reward_whitening:
            adv = whiten(adv, batch.action_mask)
        d_sent = sentence_score(sd.q, batch.mask, cfg.strict_eq3)
        c_sent = sentence_score(sc.q, batch.mask, cfg.strict_eq3)
        reward = sentence_reward(d_sent, c_sent)
    ok = policy_gradient_update(state.generator, batch, adv, state.optimizers["generator"], cfg.clip_norm)
    m = batch.action_mask
    return {
        "ok": ok,
        "reward": float(reward.mean()),
        "advantage_abs": float(adv[m].abs().mean()) if bool(m.any()) else 0.0,
        "blended_q": float(trace.blended_q[m].mean()) if bool(m.any()) else 0.0,
        "blended_v": float(trace.blended_v[m].mean()) if bool(m.any()) else 0.0,
    }


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


# ---------------------------------------------------------------- phases


def pretrain(config: TrainConfig, data: DatasetBundle, state: Optional[RunState] = None) -> RunState:
    """Generator MLE first, then discriminator (+critic) on real vs generated,
    then classifier on labeled data only (+critic on generated)."""
    state = state or init_state(config, data.vocabulary)
    cfg = state.config
    record = _Recorder(state)
    labeled = _Pool(data.labeled_train)
    unlabeled = _Pool(data.unlabeled)
    real = _Pool.concat(labeled, unlabeled)
    try:
        with _BlockGuard(state, ("generator",)):
            for ep in range(cfg.pretrain_g):
                batches = _mle_batches(labeled, unlabeled, cfg, None, state.rng)
                losses = [_mle_step(state, *b) for b in batches]
                state.counters["pretrain_g"] += 1
                record(ep, "pretrain_g", "mle_loss", _mean(losses))
        with _BlockGuard(state, ("discriminator", "disc_critic")):
            for ep in range(cfg.pretrain_d):
                out = [_disc_step(state, ids, mask) for ids, mask, _ in real.epoch(cfg.batch_size, state.rng)]
                state.counters["pretrain_d"] += 1
                record(ep, "pretrain_d", "disc_loss", _mean([o[0] for o in out]))
                record(ep, "pretrain_d", "disc_critic_loss", _mean([o[1] for o in out]))
        with _BlockGuard(state, ("classifier", "cls_critic")):
            for ep in range(cfg.pretrain_c):
                out = [_cls_step(state, *b, with_fake=False) for b in labeled.epoch(cfg.batch_size, state.rng)]
                state.counters["pretrain_c"] += 1
                record(ep, "pretrain_c", "cls_loss", _mean([o[0] for o in out]))
                record(ep, "pretrain_c", "cls_critic_loss", _mean([o[1] for o in out]))
    except NonFiniteError as err:
        raise TrainingAborted(f"non-finite loss during pre-training: {err}") from err
    return state


def adversarial_train(
    config: TrainConfig,
    data: DatasetBundle,
    state: RunState,
    on_epoch: Optional[Callable[[RunState], None]] = None,
) -> RunState:
    """Run ``config.training_epochs`` rounds of the interleaved loop on top of ``state``.

    Each round: generator policy-gradient steps, generator MLE steps,
    discriminator + critic steps, classifier + critic steps. Every inner
    "epoch" is ``steps_per_epoch`` batches.
    """
    cfg = state.config = config
    record = _Recorder(state)
    labeled = _Pool(data.labeled_train)
    unlabeled = _Pool(data.unlabeled)
    real = _Pool.concat(labeled, unlabeled)
    steps = _steps(cfg, data)
    test = _Pool(data.labeled_test)
    consecutive_skips = 0

    for _ in range(cfg.training_epochs):
        epoch = state.counters["training_epochs"]
        try:
            with _BlockGuard(state, ("generator",)):
                pg = []
                for _ in range(cfg.g_adv_epochs):
                    for _ in range(steps):
                        out = _pg_step(state)
                        pg.append(out)
                        if out["ok"]:
                            consecutive_skips = 0
                        else:
                            consecutive_skips += 1
                            state.counters["pg_skipped"] += 1
                            record(epoch, "g_adv", "skipped_update", 1)
                            if consecutive_skips >= 3:
                                raise TrainingAborted("three consecutive non-finite policy-gradient updates")
                    state.counters["g_adv"] += 1
                for key in ("reward", "advantage_abs", "blended_q", "blended_v"):
                    if pg:
                        record(epoch, "g_adv", key, _mean([o[key] for o in pg]))

                mle = []
                for _ in range(cfg.g_mle_epochs):
                    mle += [_mle_step(state, *b) for b in _mle_batches(labeled, unlabeled, cfg, steps, state.rng)]
                    state.counters["g_mle"] += 1
                if mle:
                    record(epoch, "g_mle", "mle_loss", _mean(mle))

            with _BlockGuard(state, ("discriminator", "disc_critic")):
                out = []
                for _ in range(cfg.d_epochs):
                    for _ in range(steps):
                        ids, mask, _ = real.sample(cfg.batch_size, state.rng)
                        out.append(_disc_step(state, ids, mask))
                    state.counters["d"] += 1
                if out:
                    record(epoch, "d", "disc_loss", _mean([o[0] for o in out]))
                    record(epoch, "d", "disc_critic_loss", _mean([o[1] for o in out]))

            with _BlockGuard(state, ("classifier", "cls_critic")):
                out = []
                for _ in range(cfg.c_epochs):
                    for _ in range(steps):
                        out.append(_cls_step(state, *labeled.sample(cfg.batch_size, state.rng), with_fake=True))
                    state.counters["c"] += 1
                if out:
                    record(epoch, "c", "cls_loss", _mean([o[0] for o in out]))
                    record(epoch, "c", "cls_critic_loss", _mean([o[1] for o in out]))
        except NonFiniteError as err:
            raise TrainingAborted(f"non-finite loss in training epoch {epoch}: {err}") from err

        state.counters["training_epochs"] += 1
        if cfg.eval_every_epoch and len(test):
            record(epoch, "eval", "test_accuracy", classifier_accuracy(state, test.ids, test.mask, test.labels))
        if cfg.checkpoint_every and cfg.checkpoint_dir and state.counters["training_epochs"] % cfg.checkpoint_every == 0:
            save_checkpoint(state, Path(cfg.checkpoint_dir) / f"epoch{state.counters['training_epochs']:04d}.ckpt")
        if on_epoch is not None:
            on_epoch(state)
    return state


def train(config: TrainConfig, data: DatasetBundle) -> RunState:
    state = pretrain(config, data)
    return adversarial_train(config, data, state)


# ---------------------------------------------------------------- evaluation helpers


@torch.no_grad()
def predict_proba(state: RunState, ids: torch.Tensor, mask: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    cls = state.classifier
    cls.eval()
    out = [cls.sentence_probs(ids[i : i + batch_size], mask[i : i + batch_size], state.config.strict_eq3)
           for i in range(0, ids.shape[0], batch_size)]
    return torch.cat(out) if out else torch.zeros(0, 2)


def predict(state: RunState, ids, mask) -> torch.Tensor:
    return predict_from_probs(predict_proba(state, ids, mask), state.config.tie_class)


def classifier_accuracy(state: RunState, ids, mask, labels) -> float:
    return accuracy(predict(state, ids, mask).tolist(), labels.tolist())


def evaluate(state: RunState, examples) -> dict:
    pool = _Pool(examples)
    preds = predict(state, pool.ids, pool.mask).tolist()
    gold = pool.labels.tolist()
    return {
        "accuracy": accuracy(preds, gold),
        "f1": f1(preds, gold, state.config.positive_class),
        "perplexity": perplexity(state.generator, pool.ids, pool.mask, pool.labels),
    }


# ---------------------------------------------------------------- checkpoints


def _encode(obj, arrays: list):
    """JSON-able tree with tensors replaced by references into ``arrays``."""
    if isinstance(obj, torch.Tensor):
        arrays.append(obj.detach().cpu().contiguous().numpy())
        return {"__array__": len(arrays) - 1}
    if isinstance(obj, dict):
        # sorted so that arrays are laid out independently of insertion order
        items = sorted(obj.items(), key=lambda kv: (type(kv[0]).__name__, kv[0]))
        if all(isinstance(k, str) for k in obj):
            return {"__dict__": {k: _encode(v, arrays) for k, v in items}}
        return {"__pairs__": [[_encode(k, arrays), _encode(v, arrays)] for k, v in items]}
    if isinstance(obj, tuple):
        return {"__tuple__": [_encode(v, arrays) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v, arrays) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _decode(obj, arrays: list):
    if isinstance(obj, list):
        return [_decode(v, arrays) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__array__" in obj:
        return torch.from_numpy(arrays[obj["__array__"]].copy())
    if "__dict__" in obj:
        return {k: _decode(v, arrays) for k, v in obj["__dict__"].items()}
    if "__pairs__" in obj:
        return {_decode(k, arrays): _decode(v, arrays) for k, v in obj["__pairs__"]}
    return tuple(_decode(v, arrays) for v in obj["__tuple__"])


def _pack(payload) -> bytes:
    arrays: list = []
    tree = _encode(payload, arrays)
    specs, offset = [], 0
    for a in arrays:
        specs.append({"dtype": a.dtype.str, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    meta = json.dumps({"tree": tree, "arrays": specs}, sort_keys=True, allow_nan=True).encode()
    return meta + b"\n" + b"".join(a.tobytes() for a in arrays)


def _unpack(blob: bytes):
    nl = blob.index(b"\n")
    meta = json.loads(blob[:nl])
    raw = memoryview(blob)[nl + 1 :]
    arrays = []
    for spec in meta["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arrays.append(np.frombuffer(raw, dtype, count, spec["offset"]).reshape(spec["shape"]))
    return _decode(meta["tree"], arrays)


def save_checkpoint(state: RunState, path) -> None:
    """Single-file container: magic line, JSON header line, then the payload
    (a JSON structure line followed by the raw bytes of every tensor)."""
    payload = {
        "config": state.config.to_dict(),
        "vocabulary": list(state.vocabulary.tokens) if state.vocabulary else None,
        "params": {k: m.state_dict() for k, m in state.modules().items()},
        "optimizers": {k: o.state_dict() for k, o in state.optimizers.items()},
        "rng": state.rng.get_state(),
        "counters": dict(state.counters),
        "metrics": list(state.metrics),
    }
    blob = _pack(payload)
    header = {
        "schema": SCHEMA_VERSION,
        "config_hash": state.config.digest(),
        "payload_bytes": len(blob),
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)
    tmp.replace(path)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise CheckpointError(f"{path}: not a spamgan checkpoint")
        try:
            return json.loads(fh.readline())
        except json.JSONDecodeError as err:
            raise CheckpointError(f"{path}: corrupt header") from err


def load_checkpoint(path) -> RunState:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a spamgan checkpoint")
    rest = raw[len(_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(rest[:nl])
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: corrupt header") from err
    if header.get("schema") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema {header.get('schema')} != supported {SCHEMA_VERSION}")
    blob = rest[nl + 1 :]
    if len(blob) != header["payload_bytes"] or hashlib.sha256(blob).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload truncated or corrupted")
    payload = _unpack(blob)

    cfg_dict = dict(payload["config"])
    cfg_dict["class_prior"] = tuple(cfg_dict["class_prior"])
    config = TrainConfig(**cfg_dict)
    if config.digest() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    vocab = Vocabulary(tuple(payload["vocabulary"])) if payload["vocabulary"] else None
    state = init_state(config, vocab)
    for name, module in state.modules().items():
        module.load_state_dict(payload["params"][name])
    for name, opt in state.optimizers.items():
        opt.load_state_dict(payload["optimizers"][name])
    state.rng.set_state(payload["rng"])
    state.counters = dict(payload["counters"])
    state.metrics = list(payload["metrics"])
    return state
