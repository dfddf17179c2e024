"""SGD with momentum, semisupervised gradient mixing and the mu schedule."""

import time
from dataclasses import dataclass, field

import numpy as np

from .sf_layer import renormalize


class NumericalError(FloatingPointError):
    """A gradient or parameter became non-finite."""


@dataclass
class SgdState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)
    rngs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class MuSchedule:
    """Consecutive stages of ``(mu, epochs)``."""

    stages: list

    def __post_init__(self):
        self.stages = [(float(mu), int(n)) for mu, n in self.stages]
        for mu, n in self.stages:
            if not 0.0 <= mu <= 1.0:
                raise ValueError(f"mu must lie in [0, 1], got {mu}")
            if n < 0:
                raise ValueError(f"stage length must be nonnegative, got {n}")

    @classmethod
    def step_down(cls, epochs, mus=(0.8, 0.5, 0.3, 0.0)):
        """Split ``epochs`` into equal stages, earlier stages taking any remainder."""
        sizes = [len(part) for part in np.array_split(np.arange(epochs), len(mus))]
        return cls(list(zip(mus, sizes)))

    @classmethod
    def constant(cls, epochs, mu=0.0):
        return cls([(mu, epochs)])

    @property
    def epochs(self):
        return sum(n for _, n in self.stages)

    def trace(self):
        """The mu value used at every epoch."""
        return [mu for mu, n in self.stages for _ in range(n)]

    def mu_at(self, epoch):
        trace = self.trace()
        return trace[min(epoch, len(trace) - 1)] if trace else 0.0


def mix_gradients(grad_s, grad_u, mu):
    """``(1 - mu) * grad_s + mu * grad_u``, for arrays or name -> array dicts."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if isinstance(grad_s, dict):
        if grad_s.keys() != grad_u.keys():
            raise ValueError("gradient registries have different parameters")
        return {k: mix_gradients(grad_s[k], grad_u[k], mu) for k in grad_s}
    grad_s = np.asarray(grad_s, dtype=np.float64)
    grad_u = np.asarray(grad_u, dtype=np.float64)
    if grad_s.shape != grad_u.shape:
        raise ValueError(f"cannot mix gradients of shapes {grad_s.shape} and {grad_u.shape}")
    return (1.0 - mu) * grad_s + mu * grad_u


def sgd_step(params, grads, state, dictionaries=()):
    """One momentum step, in place, then renormalize the named dictionaries.

    ``v <- momentum * v - lr * g``; ``p <- p + v``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    for name, p in params.items():
        g = grads[name]
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        v *= state.momentum
        v -= state.learning_rate * g
        p += v
    for name in dictionaries:
        renormalize(params[name])


UNSUP_SCOPES = ("network", "dictionary")


def compute_gradients(net, x, y, mu=0.0, x_unlabeled=None, unsup_scope="network"):
    """Supervised loss and the (possibly mixed) gradient registry for one batch.

    With ``unsup_scope="network"`` mixing covers the sparse layers and
    everything below them; layers above the topmost sparse layer see no
    reconstruction loss and keep their supervised gradient. With
    ``"dictionary"`` only the dictionaries are mixed and the layers below a
    sparse layer are trained on the supervised loss alone.
    """
    if unsup_scope not in UNSUP_SCOPES:
        raise ValueError(f"unsup_scope must be one of {UNSUP_SCOPES}, got {unsup_scope!r}")
    loss, logits = net.forward(x, y)
    grads = net.backward()
    if mu > 0.0 and net.sparse_layers():
        grads = {k: v.copy() for k, v in grads.items()}
        if x_unlabeled is not None:
            net.forward(x_unlabeled)
        _, grads_u = net.backward_unsup()
        top = max(i for i, layer in enumerate(net.layers) if layer.sparse)
        if unsup_scope == "dictionary":
            below = net.dictionary_names()
        else:
            below = [k for k in grads if int(k.split(".", 1)[0]) <= top]
        mixed = mix_gradients({k: grads[k] for k in below}, {k: grads_u[k] for k in below}, mu)
        grads.update(mixed)
    return loss, logits, grads


def evaluate(net, images, labels, batch_size=500):
    """Mean loss and percent accuracy."""
    total = 0.0
    correct = 0
    for lo in range(0, len(images), batch_size):
        xb, yb = images[lo:lo + batch_size], labels[lo:lo + batch_size]
        loss, logits = net.forward(xb, yb)
        total += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    n = max(len(images), 1)
    return total / n, 100.0 * correct / n


@dataclass
class TrainSettings:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 1.0
    schedule: MuSchedule | None = None
    unsup_scope: str = "network"
    seed: int = 0
    eval_batch_size: int = 500


def train(net, train_set, settings, eval_sets=None, unlabeled=None, state=None, start_epoch=0,
          on_epoch_end=None, log=None):
    """Minibatch training.

    Parameters
    ----------
    net : Network
    train_set : (images, labels)
    settings : TrainSettings
    eval_sets : dict of name -> (images, labels), evaluated after every epoch
    unlabeled : ndarray, optional
        Pool of unlabeled images for the reconstruction loss. When omitted
        the labeled batch is reused.
    on_epoch_end : callable(epoch, rows, net, state), optional

    Returns
    -------
    list of dict
        One row per epoch and split with keys ``epoch, split, loss,
        accuracy, mu, wall_seconds``.
    """
    images, labels = train_set
    if images.shape[1:] != net.input_shape:
        raise ValueError(f"training images of shape {images.shape[1:]} do not fit network input {net.input_shape}")
    schedule = settings.schedule or MuSchedule.constant(settings.epochs)
    if schedule.epochs != settings.epochs:
        raise ValueError(f"mu schedule covers {schedule.epochs} epochs, training runs {settings.epochs}")
    state = state or SgdState(settings.learning_rate, settings.momentum)
    if not state.rngs:
        state.rngs = {"order": np.random.default_rng([settings.seed, 0]),
                      "unlabeled": np.random.default_rng([settings.seed, 1])}
    order_rng = state.rngs["order"]
    unlab_rng = state.rngs["unlabeled"]
    dictionaries = net.dictionary_names()
    params = net.named_params()
    rows = []
    for epoch in range(start_epoch, settings.epochs):
        t0 = time.perf_counter()
        mu = schedule.mu_at(epoch)
        state.learning_rate = settings.learning_rate * settings.lr_decay ** epoch
        order = order_rng.permutation(len(images))
        total, correct = 0.0, 0
        for lo in range(0, len(order), settings.batch_size):
            idx = order[lo:lo + settings.batch_size]
            xu = None
            if mu > 0 and unlabeled is not None:
                xu = unlabeled[unlab_rng.integers(0, len(unlabeled), len(idx))]
            loss, logits, grads = compute_gradients(net, images[idx], labels[idx], mu, xu, settings.unsup_scope)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            sgd_step(params, grads, state, dictionaries)
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        epoch_rows = [{"epoch": epoch, "split": "train", "loss": total / len(order),
                       "accuracy": 100.0 * correct / len(order), "mu": mu,
                       "wall_seconds": time.perf_counter() - t0}]
        for name, (ex, ey) in (eval_sets or {}).items():
            t1 = time.perf_counter()
            el, ea = evaluate(net, ex, ey, settings.eval_batch_size)
            epoch_rows.append({"epoch": epoch, "split": name, "loss": el, "accuracy": ea, "mu": mu,
                               "wall_seconds": time.perf_counter() - t1})
        rows.extend(epoch_rows)
        if log is not None:
            for r in epoch_rows:
                log(r)
        if on_epoch_end is not None:
            on_epoch_end(epoch, epoch_rows, net, state)
    return rows
