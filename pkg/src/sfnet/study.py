"""Limited-supervision study: train each variant on a few labeled digits
per class and report test accuracy over several trials.

Every trial draws its own stratified subset of the training pool; the
remaining pool images serve as unlabeled data for the reconstruction loss.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .data import SubsampleSpec, subsample
from .nn import build_network
from .trainer import MuSchedule, TrainSettings, evaluate, train


@dataclass
class StudySettings:
    """Shared optimizer settings plus per-variant layer options.

    ``options`` maps a variant to :func:`sfnet.nn.build_network` keyword
    arguments; ``semisupervised`` lists the variants trained with the mu
    step-down schedule and the unlabeled pool.
    """

    per_class: int = 10
    epochs: int = 40
    batch_size: int = 10
    learning_rate: float = 0.01
    momentum: float = 0.9
    semisupervised: tuple = ("csf",)
    unsup_scope: str = "network"
    options: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    variant: str
    trial: int
    accuracy: float
    seconds: float


def run_trial(variant, trial, pool, test, settings):
    """Train ``variant`` on the subset drawn with seed ``trial``; return its test accuracy."""
    start = time.perf_counter()
    labeled = subsample(pool, SubsampleSpec(settings.per_class, trial))
    net = build_network(variant, seed=trial, **settings.options.get(variant, {}))
    semi = bool(net.sparse_layers()) and variant in settings.semisupervised
    schedule = MuSchedule.step_down(settings.epochs) if semi else None
    train(net, (labeled.images, labeled.labels),
          TrainSettings(epochs=settings.epochs, batch_size=settings.batch_size,
                        learning_rate=settings.learning_rate, momentum=settings.momentum,
                        schedule=schedule, unsup_scope=settings.unsup_scope, seed=trial),
          unlabeled=pool.images if semi else None)
    _, acc = evaluate(net, test.images, test.labels)
    return TrialResult(variant, trial, acc, time.perf_counter() - start)


def run_study(variants, trials, pool, test, settings, log=None):
    """Mean accuracy per variant and every trial result."""
    results = []
    for variant in variants:
        for trial in trials:
            r = run_trial(variant, trial, pool, test, settings)
            results.append(r)
            if log:
                log(f"{variant:7s} trial {trial}: {r.accuracy:6.2f}% ({r.seconds:.0f} s)")
    means = {v: float(np.mean([r.accuracy for r in results if r.variant == v])) for v in variants}
    return means, results


STUDY_DEFAULTS = StudySettings(
    options={"csf": {"csf": {"lambda1": 0.15, "lambda2": 0.01}},
             "sf": {"sf": {"lambda1": 1.0, "lambda2": 0.01}}},
)
