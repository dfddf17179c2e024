"""
Learning digits from 100 labels
===============================

Each trial draws 10 labeled digits per class from the training pool. It
trains LeNet and its SF and CSF variants on them, then scores all three on
2000 held-out digits. The sparse variants may additionally use the whole
pool, without labels, through the reconstruction loss and the mu step-down
schedule.

Uses the 5000-digit MNIST subset bundled with ``mlxtend``.

    python demos/limited_supervision.py --trials 5
"""

import argparse
import dataclasses
import json

from sfnet.data import mlxtend_split
from sfnet.study import STUDY_DEFAULTS, run_study

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--trials", type=int, default=5)
parser.add_argument("--variants", nargs="+", default=["lenet", "sf", "csf"])
parser.add_argument("--epochs", type=int, default=STUDY_DEFAULTS.epochs)
args = parser.parse_args()

settings = dataclasses.replace(STUDY_DEFAULTS, epochs=args.epochs)
print("settings:", json.dumps(dataclasses.asdict(settings)))

pool, test = mlxtend_split()
print(f"{len(pool)} pool images, {len(test)} test images")
means, results = run_study(args.variants, range(args.trials), pool, test, settings, log=print)

print()
for variant, mean in means.items():
    gap = "" if variant == "lenet" or "lenet" not in means else f"  ({mean - means['lenet']:+.2f} vs lenet)"
    print(f"{variant:6s} mean accuracy {mean:6.2f}%{gap}")
