"""Experiment configuration files.

A config is sectioned ``key = value`` text (``configparser`` syntax)::

    [network]
    variant = sf

    [sf]
    atoms = 500
    lambda1 = 0.5
    lambda2 = 0.01

    [optimizer]
    epochs = 30
    batch_size = 64
    learning_rate = 0.01

The sparsity weights and dictionary width of every sparse layer in the
network, and the epoch count, have no defaults and must be written out.
"""

import configparser
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .trainer import UNSUP_SCOPES, MuSchedule, TrainSettings


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


@dataclass
class SparseSettings:
    atoms: int
    lambda1: float
    lambda2: float
    max_active: int | None = None
    size: int = 5


@dataclass
class DataSettings:
    source: str = "idx"
    dir: str | None = None
    prefix: str = ""
    per_class: int | None = None
    trial_seed: int = 0
    unlabeled: str = "none"
    test_limit: int | None = None


@dataclass
class TrainConfig:
    variant: str = "lenet"
    layers: list | None = None
    input_shape: tuple = (28, 28, 1)
    conv1: int = 20
    conv2: int = 50
    hidden: int = 500
    csf: SparseSettings | None = None
    sf: SparseSettings | None = None
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 1.0
    mu_schedule: list = field(default_factory=list)
    unsup_scope: str = "network"
    data: DataSettings = field(default_factory=DataSettings)
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs/default"

    # construction -------------------------------------------------------
    def network_kwargs(self):
        if self.layers is not None:
            return {"spec": self.layers, "input_shape": self.input_shape, "seed": self.seed}
        opts = {"conv1": self.conv1, "conv2": self.conv2, "hidden": self.hidden}
        if self.csf is not None:
            opts["csf_atoms"] = self.csf.atoms
            opts["kernel"] = self.csf.size
            opts["csf"] = {"lambda1": self.csf.lambda1, "lambda2": self.csf.lambda2,
                           "max_active": self.csf.max_active}
        if self.sf is not None:
            opts["sf_atoms"] = self.sf.atoms
            opts["sf"] = {"lambda1": self.sf.lambda1, "lambda2": self.sf.lambda2,
                          "max_active": self.sf.max_active}
        return {"spec": self.variant, "input_shape": self.input_shape, "seed": self.seed, **opts}

    def schedule(self):
        if not self.mu_schedule:
            return MuSchedule.constant(self.epochs)
        return MuSchedule(self.mu_schedule)

    def train_settings(self):
        return TrainSettings(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                             momentum=self.momentum, lr_decay=self.lr_decay, schedule=self.schedule(),
                             unsup_scope=self.unsup_scope, seed=self.seed)

    # serialization ------------------------------------------------------
    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        net = {"input_shape": ",".join(map(str, self.input_shape))}
        if self.layers is not None:
            net["layers"] = json.dumps(self.layers)
        else:
            net.update(variant=self.variant, conv1=self.conv1, conv2=self.conv2, hidden=self.hidden)
        cp["network"] = {k: str(v) for k, v in net.items()}
        for name in ("csf", "sf"):
            s = getattr(self, name)
            if s is not None:
                cp[name] = {k: ("" if v is None else str(v)) for k, v in asdict(s).items()}
        cp["optimizer"] = {"epochs": str(self.epochs), "batch_size": str(self.batch_size),
                           "learning_rate": repr(self.learning_rate), "momentum": repr(self.momentum),
                           "lr_decay": repr(self.lr_decay)}
        cp["semisupervision"] = {"mu_schedule": ", ".join(f"{mu!r}:{n}" for mu, n in self.mu_schedule) or "none",
                                 "unsup_scope": self.unsup_scope}
        cp["data"] = {k: ("" if v is None else str(v)) for k, v in asdict(self.data).items()}
        cp["run"] = {"seed": str(self.seed), "threads": str(self.threads), "out_dir": self.out_dir}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)

    def save(self, path):
        Path(path).write_text(self.to_ini())


def _line_of(text, section, key):
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return no
    return None


def _parse_schedule(value, epochs):
    value = value.strip().lower()
    if value in ("", "none"):
        return []
    if value == "step_down":
        return MuSchedule.step_down(epochs).stages
    stages = []
    for part in value.split(","):
        mu, _, n = part.partition(":")
        stages.append((float(mu), int(n)))
    return stages


def load_config(path):
    """Parse and validate a config file; errors name the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(str(err), path) from None
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        raise ConfigError(err.message.splitlines()[0] if hasattr(err, "message") else str(err), path, line) from None

    def get(section, key, conv=str, required=False, default=None):
        raw = cp.get(section, key, fallback=None)
        if raw is None or raw.strip() == "":
            if required:
                line = _line_of(text, section, key)
                raise ConfigError(f"[{section}] {key} is required", path, line)
            return default
        try:
            return conv(raw.strip())
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[{section}] {key} = {raw.strip()!r}: {err}", path, _line_of(text, section, key)) from None

    cfg = TrainConfig()
    layers = get("network", "layers", json.loads)
    if layers is not None:
        cfg.layers = layers
        cfg.variant = "custom"
    else:
        cfg.variant = get("network", "variant", default="lenet")
        if cfg.variant not in ("lenet", "csf", "sf", "csf_sf"):
            raise ConfigError(f"[network] variant = {cfg.variant!r} is not one of lenet, csf, sf, csf_sf",
                              path, _line_of(text, "network", "variant"))
    cfg.input_shape = get("network", "input_shape", lambda s: tuple(int(v) for v in s.split(",")),
                          default=(28, 28, 1))
    cfg.conv1 = get("network", "conv1", int, default=20)
    cfg.conv2 = get("network", "conv2", int, default=50)
    cfg.hidden = get("network", "hidden", int, default=500)
    needed = {"csf": cfg.variant in ("csf", "csf_sf"), "sf": cfg.variant in ("sf", "csf_sf")}
    for name, wanted in needed.items():
        if wanted or cp.has_section(name):
            if not cp.has_section(name):
                raise ConfigError(f"variant {cfg.variant} needs a [{name}] section", path)
            s = SparseSettings(atoms=get(name, "atoms", int, required=True),
                               lambda1=get(name, "lambda1", float, required=True),
                               lambda2=get(name, "lambda2", float, required=True),
                               max_active=get(name, "max_active", int),
                               size=get(name, "size", int, default=5))
            if s.lambda1 < 0 or s.lambda2 <= 0:
                raise ConfigError(f"[{name}] needs lambda1 >= 0 and lambda2 > 0", path, _line_of(text, name, "lambda1"))
            setattr(cfg, name, s)
    cfg.epochs = get("optimizer", "epochs", int, required=True)
    cfg.batch_size = get("optimizer", "batch_size", int, default=64)
    cfg.learning_rate = get("optimizer", "learning_rate", float, default=0.01)
    cfg.momentum = get("optimizer", "momentum", float, default=0.9)
    cfg.lr_decay = get("optimizer", "lr_decay", float, default=1.0)
    if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.learning_rate <= 0 or not 0 <= cfg.momentum < 1:
        raise ConfigError("[optimizer] needs epochs >= 1, batch_size >= 1, learning_rate > 0, 0 <= momentum < 1",
                          path, _line_of(text, "optimizer", "epochs"))
    try:
        cfg.mu_schedule = _parse_schedule(cp.get("semisupervision", "mu_schedule", fallback="none"), cfg.epochs)
        MuSchedule(cfg.mu_schedule)
    except ValueError as err:
        raise ConfigError(f"[semisupervision] mu_schedule: {err}", path,
                          _line_of(text, "semisupervision", "mu_schedule")) from None
    if cfg.mu_schedule and sum(n for _, n in cfg.mu_schedule) != cfg.epochs:
        raise ConfigError(f"[semisupervision] mu_schedule covers {sum(n for _, n in cfg.mu_schedule)} epochs, "
                          f"[optimizer] epochs = {cfg.epochs}", path, _line_of(text, "semisupervision", "mu_schedule"))
    cfg.unsup_scope = get("semisupervision", "unsup_scope", default="network")
    if cfg.unsup_scope not in UNSUP_SCOPES:
        raise ConfigError(f"[semisupervision] unsup_scope = {cfg.unsup_scope!r} is not one of {', '.join(UNSUP_SCOPES)}",
                          path, _line_of(text, "semisupervision", "unsup_scope"))
    cfg.data = DataSettings(source=get("data", "source", default="idx"), dir=get("data", "dir"),
                            prefix=get("data", "prefix", default=""), per_class=get("data", "per_class", int),
                            trial_seed=get("data", "trial_seed", int, default=0),
                            unlabeled=get("data", "unlabeled", default="none"),
                            test_limit=get("data", "test_limit", int))
    if cfg.data.source not in ("idx", "mlxtend"):
        raise ConfigError(f"[data] source = {cfg.data.source!r} is not idx or mlxtend", path,
                          _line_of(text, "data", "source"))
    if cfg.data.unlabeled not in ("none", "train"):
        raise ConfigError(f"[data] unlabeled = {cfg.data.unlabeled!r} is not none or train", path,
                          _line_of(text, "data", "unlabeled"))
    cfg.seed = get("run", "seed", int, default=0)
    cfg.threads = get("run", "threads", int, default=1)
    cfg.out_dir = get("run", "out_dir", default="runs/default")
    return cfg
