"""Lasso-penalised cross-entropy training with Adam and a step LR schedule."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import logging
import math

import numpy as np

from .errors import ConfigError, DivergenceError, InvalidInputError
from .model import forward_batch, init_params, model_backward, prepare_batch, predict

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainHyper:
    batch_size: int = 20
    lr0: float = 0.02
    lambda_l1: float = 0.002
    l2_decay: float = 0.08
    epochs: int = 150
    lr_step: int = 10
    lr_gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr_step"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_gamma <= 0:
            raise ConfigError("lr_gamma must be > 0")
        for name in ("lr0", "lambda_l1", "l2_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float

    def log_line(self):
        return (f"epoch={self.epoch} lr={self.lr:.6g} train_loss={self.train_loss:.6f} "
                f"train_acc={self.train_acc:.4f} val_acc={self.val_acc:.4f}")


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_acc")


def history_tsv(history):
    rows = ["\t".join(HISTORY_FIELDS)]
    for r in history:
        rows.append("\t".join(repr(v) if isinstance(v, float) else str(v)
                              for v in asdict(r).values()))
    return "\n".join(rows) + "\n"


@dataclass
class TrainState:
    m: dict
    v: dict
    t: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.values.items()},
            v={k: np.zeros_like(p) for k, p in params.values.items()},
        )


# -- objective ----------------------------------------------------------------


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def l1_penalty(params, lam):
    if lam == 0 or params is None:
        return 0.0
    return lam * sum(float(np.abs(params[k]).sum()) for k in params.weight_names())


def l1_subgradient(params, lam):
    """``lam * sign(w)`` for every weight (sign(0) = 0); biases excluded."""
    return {k: lam * np.sign(params[k]) for k in params.weight_names()}


def loss(logits, label, params=None, lam=0.0):
    """Cross-entropy plus L1 penalty; returns ``(value, d value / d logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite logits")
    if not 0 <= label < logits.shape[-1]:
        raise InvalidInputError(f"label {label} outside [0, {logits.shape[-1]})")
    logp = _log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]) + l1_penalty(params, lam), grad


def batch_loss(logits, labels, params=None, lam=0.0):
    """Mean cross-entropy over a batch plus L1 penalty, and its logits gradient."""
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidInputError(f"labels outside [0, {k})")
    logp = _log_softmax(logits)
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    ce = -logp[np.arange(n), labels].mean()
    return float(ce) + l1_penalty(params, lam), grad / n


# -- optimiser ----------------------------------------------------------------


def lr_at(epoch, hyper):
    return hyper.lr0 * hyper.lr_gamma ** (epoch // hyper.lr_step)


def adam_step(params, grads, state, lr, l2_decay=0.0):
    """One bias-corrected Adam step with decoupled weight decay, in place.

    Decay multiplies weights (not biases) by ``1 - lr * l2_decay`` before the
    Adam update. Masked entries are forced back to zero afterwards.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = np.argwhere(~np.isfinite(g))[0]
            raise DivergenceError(f"non-finite gradient in {k} at {tuple(bad)} (step {state.t + 1})")
    state.t += 1
    b1t = 1.0 - ADAM_BETA1 ** state.t
    b2t = 1.0 - ADAM_BETA2 ** state.t
    for k, g in grads.items():
        p = params.values[k]
        if l2_decay and not k.endswith(".b"):
            p *= 1.0 - lr * l2_decay
        m = state.m[k]
        v = state.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)
    params.apply_masks()
    params.bump()


# -- loops --------------------------------------------------------------------


def _batch_gradient(config, params, x, ex, labels, lam, workers):
    """Mean loss gradient over a batch; chunks are reduced in fixed order."""
    n = len(labels)
    chunks = np.array_split(np.arange(n), min(max(1, workers), n))

    def run(idx):
        logits, tape = forward_batch(config, params, x[idx], ex[idx])
        _, dlogits = batch_loss(logits, labels[idx])
        return logits, model_backward(tape, dlogits * len(idx) / n)

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            results = list(pool.map(run, chunks))
    logits = np.concatenate([r[0] for r in results])
    grads = results[0][1]
    for _, g in results[1:]:
        for k in grads:
            grads[k] = grads[k] + g[k]
    if lam:
        for k, sg in l1_subgradient(params, lam).items():
            grads[k] = grads[k] + sg
    value, _ = batch_loss(logits, labels, params, lam)
    return value, logits, grads


@dataclass
class TrainResult:
    params: object
    state: TrainState
    history: list
    best_epoch: int


def train(config, hyper, train_set, val_set=None, iv=0.0, params=None, workers=1,
          on_epoch=None):
    """Mini-batch training on graphs pruned at ``iv``.

    Returns the best-validation parameters, or the final ones when no
    validation set is given.
    """
    samples = list(train_set)
    if not samples:
        raise InvalidInputError("empty training set")
    labels = np.array([s.label for s in samples])
    if labels.max() >= config.num_classes:
        raise InvalidInputError(f"label {labels.max()} >= num_classes {config.num_classes}")
    if iv < 0:
        raise InvalidInputError(f"input threshold must be >= 0, got {iv}")
    x, ex, _ = prepare_batch(config, samples, iv)
    val = list(val_set) if val_set is not None else []
    if params is None:
        params = init_params(config, hyper.seed)
    state = TrainState.for_params(params)
    rng = np.random.default_rng(hyper.seed)
    best, best_acc, best_epoch = None, -1.0, -1
    n = len(samples)
    for epoch in range(hyper.epochs):
        lr = lr_at(epoch, hyper)
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for k in range(0, n, hyper.batch_size):
            idx = np.sort(perm[k:k + hyper.batch_size])
            value, logits, grads = _batch_gradient(
                config, params, x[idx], ex[idx], labels[idx], hyper.lambda_l1, workers
            )
            adam_step(params, grads, state, lr, hyper.l2_decay)
            total_loss += value * len(idx)
            correct += int(np.count_nonzero(np.argmax(logits, axis=1) == labels[idx]))
        val_acc = evaluate(config, params, val, iv).accuracy if val else float("nan")
        rec = EpochRecord(epoch, lr, total_loss / n, correct / n, val_acc)
        state.epoch = epoch + 1
        state.history.append(rec)
        log.info(rec.log_line())
        if on_epoch is not None:
            on_epoch(rec, params)
        if val and val_acc > best_acc:
            best, best_acc, best_epoch = params.copy(), val_acc, epoch
    if best is None:
        best, best_epoch = params.copy(), hyper.epochs - 1
    return TrainResult(best, state, state.history, best_epoch)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    predictions: np.ndarray


def evaluate(config, params, dataset, iv=0.0, sparse=False):
    """Argmax classification (ties -> lowest class id) with a confusion matrix."""
    samples = list(dataset)
    k = config.num_classes
    conf = np.zeros((k, k), dtype=np.int64)
    if not samples:
        return EvalResult(float("nan"), conf, np.zeros(0, dtype=np.int64))
    logits = predict(config, params, samples, iv, sparse=sparse)
    pred = np.argmax(logits, axis=1)
    labels = np.array([s.label for s in samples])
    np.add.at(conf, (labels, pred), 1)
    return EvalResult(float(np.mean(pred == labels)), conf, pred)


# -- few-shot -----------------------------------------------------------------


def few_shot_hyper(k, epochs=30, seed=0, lambda_l1=0.0, l2_decay=0.08):
    """Batch ceil(K/2), constant lr 0.001*K, L2 decay only by default."""
    if not 1 <= k <= 10:
        raise InvalidInputError(f"K must be in 1..10, got {k}")
    return TrainHyper(
        batch_size=math.ceil(k / 2), lr0=0.001 * k, lambda_l1=lambda_l1,
        l2_decay=l2_decay, epochs=epochs, lr_step=epochs, lr_gamma=1.0, seed=seed,
    )


@dataclass
class FewShotResult:
    k: int
    accuracies: list

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def std(self):
        return float(np.std(self.accuracies))


def few_shot_train(config, k, pool, episodes=10, epochs=30, seed=0, test_set=None,
                   lambda_l1=0.0, l2_decay=0.08):
    """2-way K-shot protocol.

    Each episode draws K labelled samples per class from ``pool``, trains a
    fresh model, and scores it on ``test_set`` (default: the rest of the pool).
    """
    samples = list(pool)
    labels = np.array([s.label for s in samples])
    classes = np.unique(labels)
    if len(classes) != 2 or config.num_classes != 2:
        raise InvalidInputError("few-shot protocol needs exactly two classes")
    for c in classes:
        if np.count_nonzero(labels == c) < k + (0 if test_set is not None else 1):
            raise InvalidInputError(f"pool has too few samples of class {c} for K={k}")
    accs = []
    for e in range(episodes):
        rng = np.random.default_rng([seed, k, e])
        chosen = np.concatenate([rng.choice(np.flatnonzero(labels == c), k, replace=False)
                                 for c in classes])
        train_set = [samples[i] for i in np.sort(chosen)]
        held = test_set if test_set is not None else [
            s for i, s in enumerate(samples) if i not in set(chosen.tolist())]
        hyper = few_shot_hyper(k, epochs, seed=int(rng.integers(2**31)),
                               lambda_l1=lambda_l1, l2_decay=l2_decay)
        result = train(config, hyper, train_set)
        accs.append(evaluate(config, result.params, held).accuracy)
    return FewShotResult(k, accs)
