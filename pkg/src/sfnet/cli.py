"""Command-line entry point: ``sfnet train|eval|gradcheck|datagen``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data error,
4 numerical abort.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, gradcheck
from .config import ConfigError, load_config
from .elastic_net import ElasticNetError
from .nn import build_network
from .trainer import NumericalError, SgdState, train

log = logging.getLogger("sfnet")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "mu", "wall_seconds")


def resolve_data(settings, data_dir=None):
    """Return ``(train, test, unlabeled_images_or_None)`` for a config."""
    if settings.source == "mlxtend":
        pool, test = data.mlxtend_split()
    else:
        directory = data.data_dir(data_dir or settings.dir)
        pool = data.load_split(directory, "train", settings.prefix)
        test = data.load_split(directory, "test", settings.prefix)
    train_set = pool
    if settings.per_class:
        train_set = data.subsample(pool, data.SubsampleSpec(settings.per_class, settings.trial_seed))
    if settings.test_limit:
        test = test.take(np.arange(min(settings.test_limit, len(test))))
    unlabeled = pool.images if settings.unlabeled == "train" else None
    return train_set, test, unlabeled


def topology(cfg):
    kw = cfg.network_kwargs()
    return {"spec": kw.pop("spec"), "input_shape": list(kw.pop("input_shape")), "seed": kw.pop("seed"),
            "options": kw}


def network_from_topology(topo):
    return build_network(topo["spec"], tuple(topo["input_shape"]), seed=topo["seed"], **topo["options"])


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.out_dir = str(out)
    train_set, test, unlabeled = resolve_data(cfg.data, args.data_dir)
    topo = topology(cfg)
    net = network_from_topology(topo)
    net.set_threads(cfg.threads)
    cfg.save(out / "config.resolved.ini")
    (out / "train_indices.txt").write_text(
        " ".join(map(str, train_set.provenance.get("subsample_indices", []))) + "\n")
    state = SgdState(cfg.learning_rate, cfg.momentum)
    best = {"score": None}

    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRIC_FIELDS)
        writer.writeheader()

        def on_epoch_end(epoch, rows, net, state):
            for r in rows:
                writer.writerow({k: r[k] for k in METRIC_FIELDS})
            f.flush()
            ref = rows[-1]
            score = ref["accuracy"] if ref["split"] != "train" else -ref["loss"]
            if best["score"] is None or score > best["score"]:
                best["score"] = score
                checkpoint.save(out / "best.ckpt", net, state, epoch + 1, topo)
            log.info("epoch %d: %s", epoch, ", ".join(
                f"{r['split']} loss {r['loss']:.4f} acc {r['accuracy']:.2f}" for r in rows))

        train(net, (train_set.images, train_set.labels), cfg.train_settings(),
              eval_sets={"test": (test.images, test.labels)}, unlabeled=unlabeled, state=state,
              on_epoch_end=on_epoch_end)
    checkpoint.save(out / "final.ckpt", net, state, cfg.epochs, topo)
    print(f"wrote {out / 'final.ckpt'}, {out / 'best.ckpt'}, {out / 'metrics.csv'}, "
          f"{out / 'config.resolved.ini'}")
    return EXIT_OK


def accuracy_report(net, dataset, classes=10):
    pred = net.predict(dataset.images)
    confusion = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    acc = 100.0 * np.trace(confusion) / max(len(dataset), 1)
    lines = [f"accuracy: {acc:.2f}", f"samples: {len(dataset)}", "confusion (rows = true, columns = predicted):"]
    lines += [f"{k}: " + " ".join(f"{v:5d}" for v in confusion[k]) for k in range(classes)]
    return acc, "\n".join(lines) + "\n"


def cmd_eval(args):
    ckpt = checkpoint.load(args.checkpoint)
    net = network_from_topology(ckpt.topology)
    checkpoint.restore(ckpt, net)
    if args.threads:
        net.set_threads(args.threads)
    if args.config:
        _, dataset, _ = resolve_data(load_config(args.config).data, args.data_dir)
    elif args.source == "mlxtend":
        pool, test = data.mlxtend_split()
        dataset = test if args.split == "test" else pool
    else:
        dataset = data.load_split(data.data_dir(args.data_dir), args.split, args.prefix)
    _, report = accuracy_report(net, dataset)
    sys.stdout.write(report)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "eval_report.txt").write_text(report)
    return EXIT_OK


def cmd_gradcheck(args):
    sizes = dict(item.split("=") for item in (args.sizes or []))
    sizes = {k: int(v) for k, v in sizes.items()}
    rows = gradcheck.run_all(seed=args.seed, instances=args.instances, sizes=sizes)
    failed = False
    print(f"{'check':40s} {'max rel err':>12s} {'tol':>8s}  result")
    for kind, err, tol in rows:
        ok = err < tol
        failed |= not ok
        print(f"{kind:40s} {err:12.3e} {tol:8.0e}  {'pass' if ok else 'FAIL'}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_datagen(args):
    out = Path(args.out_dir)
    pool = data.default_background_pool() if args.kind == "img" else None
    if args.source == "mlxtend":
        splits = dict(zip(("train", "test"), data.mlxtend_split()))
    else:
        directory = data.data_dir(args.data_dir)
        splits = {s: data.load_split(directory, s) for s in ("train", "test")}
    for i, (split, ds) in enumerate(splits.items()):
        varied = data.make_variation(ds, args.kind, seed=args.seed + i, background_pool=pool)
        img, lab = data.save_split(varied, out, split, prefix=f"{args.kind}-")
        print(f"wrote {img} and {lab} ({len(varied)} images)")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sfnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data-dir")
    t.add_argument("--out-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="take the test set from this config's [data] section")
    e.add_argument("--data-dir")
    e.add_argument("--source", choices=("idx", "mlxtend"), default="idx")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--prefix", default="")
    e.add_argument("--out-dir")
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every layer kind")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=50)
    g.add_argument("--sizes", nargs="*", metavar="KEY=N", help="m, K, h, w, patch, csf_K")
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("datagen", help="write a synthetic MNIST variation as IDX files")
    d.add_argument("kind", choices=("rot", "rand", "img"))
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--data-dir")
    d.add_argument("--source", choices=("idx", "mlxtend"), default="idx")
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_datagen)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except checkpoint.CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ElasticNetError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
