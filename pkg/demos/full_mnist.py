"""
Full MNIST: LeNet against its CSF variant
=========================================

A long run (hours on one core) that needs the four official MNIST IDX files
in ``$SFNET_DATA_DIR`` (gzipped or not). It trains the baseline and the
variant whose first convolution is a CSF layer, then reports test accuracy.
The targets are 98.5% for the baseline and the CSF variant within one point
of it.

    SFNET_DATA_DIR=~/mnist python demos/full_mnist.py --epochs 10 --threads 4
"""

import argparse
import time

from sfnet.data import data_dir, load_split
from sfnet.nn import build_network
from sfnet.trainer import TrainSettings, evaluate, train

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--epochs", type=int, default=10)
parser.add_argument("--threads", type=int, default=1)
parser.add_argument("--csf-lambda1", type=float, default=0.5)
args = parser.parse_args()

directory = data_dir()
train_set = load_split(directory, "train")
test = load_split(directory, "test")
print(f"{len(train_set)} training and {len(test)} test images from {directory}")

results = {}
for variant in ("lenet", "csf"):
    net = build_network(variant, seed=0, csf={"lambda1": args.csf_lambda1, "lambda2": 0.01})
    net.set_threads(args.threads)
    start = time.perf_counter()
    train(net, (train_set.images, train_set.labels),
          TrainSettings(epochs=args.epochs, batch_size=64, learning_rate=0.01, lr_decay=0.8),
          eval_sets={"test": (test.images, test.labels)},
          log=lambda r: print(f"  {variant} epoch {r['epoch']} {r['split']}: "
                              f"loss {r['loss']:.4f} accuracy {r['accuracy']:.2f}"))
    results[variant] = evaluate(net, test.images, test.labels)[1]
    print(f"{variant}: {results[variant]:.2f}% after {(time.perf_counter() - start) / 60:.0f} min")

print(f"lenet >= 98.5: {results['lenet'] >= 98.5}; "
      f"|csf - lenet| <= 1.0: {abs(results['csf'] - results['lenet']) <= 1.0}")
