"""Layers, the sequential network container and the LeNet-family builder.

Tensors are float64 numpy arrays, batch first; images are ``(N, h, w, c)``.
Every layer implements ``forward(x)`` and ``backward(grad)``; ``backward``
fills ``layer.grads`` (same keys and shapes as ``layer.params``) and returns
the gradient with respect to the layer input.
"""

import hashlib
import json

import numpy as np

from . import csf_layer, sf_layer
from .csf_layer import PatchGeometry
from .elastic_net import ElasticNetParams


class Layer:
    kind = "layer"
    sparse = False

    def __init__(self):
        self.params = {}
        self.grads = {}

    def output_shape(self, input_shape):
        return input_shape

    def describe(self):
        return {"kind": self.kind}

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv(Layer):
    """Valid cross-correlation with bias; kernel shape ``(kh, kw, c_in, c_out)``."""

    kind = "conv"

    def __init__(self, input_shape, size, out_channels, rng, bias=True):
        super().__init__()
        h, w, c = input_shape
        self.geom = PatchGeometry(h, w, c, size, size)
        fan_in = size * size * c
        self.params["weight"] = rng.standard_normal((size, size, c, out_channels)) / np.sqrt(fan_in)
        if bias:
            self.params["bias"] = np.zeros(out_channels)
        self.out_channels = out_channels

    def output_shape(self, input_shape):
        return (self.geom.out_h, self.geom.out_w, self.out_channels)

    def describe(self):
        return {"kind": self.kind, "size": self.geom.hq, "out": self.out_channels, "bias": "bias" in self.params}

    def forward(self, x):
        self._patches = csf_layer.extract_patches(x, self.geom)
        W = self.params["weight"].reshape(-1, self.out_channels)
        out = self._patches @ W
        if "bias" in self.params:
            out += self.params["bias"]
        return out

    def backward(self, grad):
        W = self.params["weight"]
        flat = self._patches.reshape(-1, self.geom.patch_dim)
        g = grad.reshape(-1, self.out_channels)
        self.grads = {"weight": (flat.T @ g).reshape(W.shape)}
        if "bias" in self.params:
            self.grads["bias"] = g.sum(axis=0)
        gp = (g @ W.reshape(-1, self.out_channels).T).reshape(grad.shape[0], -1, self.geom.patch_dim)
        return csf_layer.overlap_add(gp, self.geom)


class Linear(Layer):
    """``a = P x + bias`` on the flattened input; ``P`` is ``(out, in)``."""

    kind = "linear"

    def __init__(self, input_shape, out_features, rng, bias=True):
        super().__init__()
        m = int(np.prod(input_shape))
        self.params["weight"] = rng.standard_normal((out_features, m)) / np.sqrt(m)
        if bias:
            self.params["bias"] = np.zeros(out_features)
        self.out_features = out_features

    def output_shape(self, input_shape):
        return (self.out_features,)

    def describe(self):
        return {"kind": self.kind, "out": self.out_features, "bias": "bias" in self.params}

    def forward(self, x):
        self._shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        out = self._x @ self.params["weight"].T
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out

    def backward(self, grad):
        self.grads = {"weight": grad.T @ self._x}
        if "bias" in self.params:
            self.grads["bias"] = grad.sum(axis=0)
        return (grad @ self.params["weight"]).reshape(self._shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        self.grads = {}
        return np.where(self._mask, grad, 0.0)


class MaxPool(Layer):
    """Non-overlapping ``size x size`` max pooling; ties route to the first maximum."""

    kind = "maxpool"

    def __init__(self, input_shape, size=2):
        super().__init__()
        h, w, _ = input_shape
        if h % size or w % size:
            raise ValueError(f"pool size {size} does not tile a {h}x{w} input")
        self.size = size

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (h // self.size, w // self.size, c)

    def describe(self):
        return {"kind": self.kind, "size": self.size}

    def forward(self, x):
        N, h, w, c = x.shape
        s = self.size
        blocks = x.reshape(N, h // s, s, w // s, s, c).transpose(0, 1, 3, 5, 2, 4).reshape(N, h // s, w // s, c, s * s)
        self._arg = blocks.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(blocks, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        self.grads = {}
        N, h, w, c = self._shape
        s = self.size
        blocks = np.zeros((N, h // s, w // s, c, s * s))
        np.put_along_axis(blocks, self._arg[..., None], grad[..., None], axis=-1)
        return blocks.reshape(N, h // s, w // s, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(self._shape)


class SF(Layer):
    """Sparse factorization of the flattened input against an ``(m, K)`` dictionary."""

    kind = "sf"
    sparse = True

    def __init__(self, input_shape, atoms, params, rng):
        super().__init__()
        m = int(np.prod(input_shape))
        self.params["dictionary"] = sf_layer.init_dictionary(m, atoms, rng)
        self.en = params
        self.atoms = atoms
        self.threads = 1

    def output_shape(self, input_shape):
        return (self.atoms,)

    def describe(self):
        return {"kind": self.kind, "atoms": self.atoms, "lambda1": self.en.lambda1,
                "lambda2": self.en.lambda2, "max_active": self.en.max_active}

    def forward(self, x):
        self._shape = x.shape
        codes, self.ctx = sf_layer.sf_forward(x.reshape(x.shape[0], -1), self.params["dictionary"],
                                              self.en, threads=self.threads)
        return codes

    def backward(self, grad):
        gP, gx = sf_layer.sf_backward(self.ctx, self.params["dictionary"], grad)
        self.grads = {"dictionary": gP}
        return gx.reshape(self._shape)

    def unsup(self):
        """Batch-mean reconstruction loss and its (dictionary, input) gradients."""
        N = self._shape[0]
        gP, gx = sf_layer.unsup_grads(self.ctx)
        return sf_layer.unsup_loss(self.ctx) / N, gP / N, gx.reshape(self._shape) / N


class CSF(Layer):
    """Sparse factorization of every ``size x size`` patch against a shared dictionary."""

    kind = "csf"
    sparse = True

    def __init__(self, input_shape, size, atoms, params, rng):
        super().__init__()
        h, w, c = input_shape
        self.geom = PatchGeometry(h, w, c, size, size)
        self.params["dictionary"] = sf_layer.init_dictionary(self.geom.patch_dim, atoms, rng)
        self.en = params
        self.atoms = atoms
        self.threads = 1

    def output_shape(self, input_shape):
        return (self.geom.out_h, self.geom.out_w, self.atoms)

    def describe(self):
        return {"kind": self.kind, "size": self.geom.hq, "atoms": self.atoms, "lambda1": self.en.lambda1,
                "lambda2": self.en.lambda2, "max_active": self.en.max_active}

    def forward(self, x):
        codes, self.ctx = csf_layer.csf_forward(x, self.params["dictionary"], self.en, self.geom,
                                                threads=self.threads)
        return codes

    def backward(self, grad):
        gP, gx = csf_layer.csf_backward(self.ctx, self.params["dictionary"], grad)
        self.grads = {"dictionary": gP}
        return gx

    def unsup(self):
        N = self.ctx.batch
        gP, gx = csf_layer.unsup_grads(self.ctx)
        return csf_layer.unsup_loss(self.ctx) / N, gP / N, gx / N


class SoftmaxLoss:
    """Mean softmax cross-entropy over the batch."""

    def forward(self, logits, labels):
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        self._p = np.exp(logp)
        self._y = labels
        return float(-logp[np.arange(len(labels)), labels].mean())

    def backward(self):
        g = self._p.copy()
        g[np.arange(len(self._y)), self._y] -= 1.0
        return g / len(self._y)


class Network:
    """A chain of layers topped by a softmax loss."""

    def __init__(self, layers, input_shape, name="custom"):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.name = name
        self.loss = SoftmaxLoss()
        self._ran_loss = False

    # parameters -------------------------------------------------------
    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out[f"{i}.{layer.kind}.{k}"] = v
        return out

    def named_grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                out[f"{i}.{layer.kind}.{k}"] = layer.grads[k]
        return out

    def dictionary_names(self):
        return [f"{i}.{layer.kind}.dictionary" for i, layer in enumerate(self.layers) if layer.sparse]

    def sparse_layers(self):
        return [layer for layer in self.layers if layer.sparse]

    def set_threads(self, threads):
        for layer in self.sparse_layers():
            layer.threads = threads

    def param_count(self, include_bias=True):
        return int(sum(v.size for k, v in self.named_params().items() if include_bias or not k.endswith("bias")))

    def report(self):
        rows = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            rows.append({**layer.describe(), "output": list(shape),
                         "params": int(sum(v.size for v in layer.params.values()))})
        return {"name": self.name, "layers": rows, "total_params": self.param_count(),
                "weight_params": self.param_count(include_bias=False)}

    def fingerprint(self):
        desc = [self.input_shape] + [(l.describe(), {k: v.shape for k, v in l.params.items()})
                                     for l in self.layers]
        return hashlib.sha256(json.dumps(desc, sort_keys=True, default=list).encode()).hexdigest()

    # forward / backward -----------------------------------------------
    def forward(self, x, y=None):
        """Run the chain; with labels also return the mean softmax loss.

        Returns
        -------
        loss : float or None
        logits : ndarray, shape (N, classes)
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input of shape {x.shape[1:]} does not match network input {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        self._ran_loss = y is not None
        if y is None:
            return None, x
        return self.loss.forward(x, np.asarray(y)), x

    def backward(self, grad_logits=None):
        """Backpropagate the supervised loss; returns the gradient registry.

        The gradient with respect to the network input is kept in
        ``self.input_grad``.
        """
        if grad_logits is None:
            if not self._ran_loss:
                raise RuntimeError("backward called before a forward pass with labels")
            grad_logits = self.loss.backward()
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self.input_grad = g
        return self.named_grads()

    def backward_unsup(self):
        """Gradient registry of the summed batch-mean reconstruction losses of
        all SF/CSF layers, backpropagated through the layers below them.

        Returns ``(loss, grads)``; layers above the top sparse layer get zeros.
        """
        total = 0.0
        g = None
        for layer in reversed(self.layers):
            if g is None and not layer.sparse:
                layer.zero_grads()
                continue
            if g is not None:
                g = layer.backward(g)
            else:
                layer.zero_grads()
            if layer.sparse:
                loss, gP, gx = layer.unsup()
                total += loss
                layer.grads["dictionary"] = layer.grads["dictionary"] + gP
                g = gx if g is None else g + gx
        self.input_grad = g
        return total, self.named_grads()

    def predict(self, x, batch_size=500):
        out = []
        for lo in range(0, len(x), batch_size):
            out.append(self.forward(x[lo:lo + batch_size])[1].argmax(axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)


# building ----------------------------------------------------------------

VARIANTS = ("lenet", "csf", "sf", "csf_sf")


def lenet_layers(variant="lenet", conv1=20, conv2=50, hidden=500, classes=10, kernel=5,
                 csf_atoms=None, sf_atoms=None, csf=None, sf=None):
    """Layer list of the curtailed LeNet or one of its sparse variants.

    ``csf`` and ``sf`` are dicts of elastic-net settings (``lambda1``,
    ``lambda2``, ``max_active``) for the substituted layers. Dictionary widths
    default to the width of the layer they replace, which keeps the weight
    count unchanged.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    use_csf = variant in ("csf", "csf_sf")
    use_sf = variant in ("sf", "csf_sf")
    first = ({"kind": "csf", "size": kernel, "atoms": csf_atoms or conv1, **(csf or {})} if use_csf
             else {"kind": "conv", "size": kernel, "out": conv1})
    spec = [first, {"kind": "maxpool", "size": 2}, {"kind": "conv", "size": kernel, "out": conv2},
            {"kind": "maxpool", "size": 2}]
    if use_sf:
        spec.append({"kind": "sf", "atoms": sf_atoms or hidden, **(sf or {})})
    else:
        spec += [{"kind": "linear", "out": hidden}, {"kind": "relu"}]
    spec.append({"kind": "linear", "out": classes})
    return spec


def _elastic(entry):
    keys = {k: entry[k] for k in ("lambda1", "lambda2", "max_active", "tolerance") if entry.get(k) is not None}
    return ElasticNetParams(**keys)


def build_network(spec, input_shape=(28, 28, 1), seed=0, **variant_options):
    """Build a network from a variant name or an explicit layer list.

    Parameters
    ----------
    spec : str or list of dict
        ``"lenet"``, ``"csf"``, ``"sf"``, ``"csf_sf"`` or a list of layer
        entries such as ``{"kind": "conv", "size": 5, "out": 20}``.
    seed : int
        Seeds every parameter initialization.
    """
    name = spec if isinstance(spec, str) else "custom"
    if isinstance(spec, str):
        spec = lenet_layers(spec, **variant_options)
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    for entry in spec:
        kind = entry.get("kind")
        try:
            if kind == "conv":
                layer = Conv(shape, entry["size"], entry["out"], rng, bias=entry.get("bias", True))
            elif kind == "linear":
                layer = Linear(shape, entry["out"], rng, bias=entry.get("bias", True))
            elif kind == "relu":
                layer = ReLU()
            elif kind == "maxpool":
                layer = MaxPool(shape, entry.get("size", 2))
            elif kind == "sf":
                layer = SF(shape, entry["atoms"], _elastic(entry), rng)
            elif kind == "csf":
                layer = CSF(shape, entry["size"], entry["atoms"], _elastic(entry), rng)
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
        except KeyError as err:
            raise ValueError(f"layer entry {entry} is missing {err}") from None
        if kind in ("conv", "maxpool", "csf") and len(shape) != 3:
            raise ValueError(f"{kind} layer needs an image input, got shape {shape}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Network(layers, input_shape, name=name)


def parity_report(input_shape=(28, 28, 1), **variant_options):
    """Parameter counts of all four variants, for the equal-size comparison."""
    return {v: build_network(v, input_shape, **variant_options).report() for v in VARIANTS}
