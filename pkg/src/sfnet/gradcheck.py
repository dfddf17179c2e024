"""Finite-difference gradient checks for every layer kind.

The sparse layers are piecewise smooth: their gradients are exact only while
the support of every code stays fixed. Instances where a central-difference
perturbation changes any support are discarded and redrawn.
"""

from dataclasses import dataclass

import numpy as np

from . import csf_layer, sf_layer
from .csf_layer import PatchGeometry
from .elastic_net import ElasticNetParams
from .nn import MaxPool, ReLU, build_network, Conv, Linear

STEP = 1e-6


def rel_error(analytic, numeric, floor=1e-10):
    """Largest absolute difference relative to the largest magnitude of either side."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def central_diff(f, x, h=STEP, coords=None):
    """Central differences of scalar ``f`` at ``x`` (perturbed in place and restored).

    Returns the numeric gradient at ``coords`` (flat indices), or everywhere.
    """
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


class UnstableSupport(Exception):
    pass


@dataclass
class CheckResult:
    kind: str
    errors: dict
    instances: int = 1

    @property
    def worst(self):
        return max(self.errors.values())


def _supported_diff(f, x, support, h=STEP):
    """Central differences of ``f`` where ``f`` returns (value, support_key)."""
    def value():
        v, key = f()
        if key != support:
            raise UnstableSupport
        return v
    return central_diff(value, x, h)


def _key(codes):
    return np.flatnonzero(np.asarray(codes).reshape(-1)).tobytes()


def sf_instance(rng, m=8, K=12, lambda2=0.01, target_support=4, backward=None):
    """Check one support-stable SF instance; returns relative errors.

    The downstream loss is ``0.5 * ||a - t||^2`` for a random target ``t``.
    ``backward`` replaces :func:`sf_layer.sf_backward` (for harness tests).
    """
    backward = backward or sf_layer.sf_backward
    P = sf_layer.init_dictionary(m, K, rng)
    x = rng.standard_normal(m)
    corr = np.sort(np.abs(P.T @ x))[::-1]
    lam1 = 0.5 * (corr[target_support - 1] + corr[target_support])
    params = ElasticNetParams(lam1, lambda2)
    t = rng.standard_normal(K)
    a, ctx = sf_layer.sf_forward(x[None], P, params)
    if not a.any():
        raise UnstableSupport
    support = _key(a)
    gP, gx = backward(ctx, P, a - t)
    uP, ux = sf_layer.unsup_grads(ctx)

    def sup():
        code, _ = sf_layer.sf_forward(x[None], P, params)
        return 0.5 * np.sum((code - t) ** 2), _key(code)

    def unsup():
        code, c = sf_layer.sf_forward(x[None], P, params)
        return sf_layer.unsup_loss(c), _key(code)

    return {
        "sf.grad_P": rel_error(gP, _supported_diff(sup, P, support).reshape(P.shape)),
        "sf.grad_x": rel_error(gx[0], _supported_diff(sup, x, support)),
        "unsup.grad_P": rel_error(uP, _supported_diff(unsup, P, support).reshape(P.shape)),
        "unsup.grad_x": rel_error(ux[0], _supported_diff(unsup, x, support)),
    }


def csf_instance(rng, h=6, w=6, c=1, size=3, K=8, lambda1=None, lambda2=0.01, backward=None):
    """Check one support-stable CSF instance (supervised and reconstruction losses)."""
    backward = backward or csf_layer.csf_backward
    geom = PatchGeometry(h, w, c, size, size)
    P = sf_layer.init_dictionary(geom.patch_dim, K, rng)
    x = rng.standard_normal((1, h, w, c))
    if lambda1 is None:
        corr = np.abs(csf_layer.extract_patches(x, geom).reshape(-1, geom.patch_dim) @ P)
        lambda1 = float(np.median(corr.max(axis=1))) * 0.5
    params = ElasticNetParams(lambda1, lambda2)
    a, ctx = csf_layer.csf_forward(x, P, params, geom)
    if not a.any():
        raise UnstableSupport
    t = rng.standard_normal(a.shape)
    support = _key(a)
    gP, gx = backward(ctx, P, a - t)
    uP, ux = csf_layer.unsup_grads(ctx)

    def sup():
        code, _ = csf_layer.csf_forward(x, P, params, geom)
        return 0.5 * np.sum((code - t) ** 2), _key(code)

    def unsup():
        code, cx = csf_layer.csf_forward(x, P, params, geom)
        return csf_layer.unsup_loss(cx), _key(code)

    return {
        "csf.grad_P": rel_error(gP, _supported_diff(sup, P, support).reshape(P.shape)),
        "csf.grad_x": rel_error(gx, _supported_diff(sup, x, support).reshape(x.shape)),
        "csf_unsup.grad_P": rel_error(uP, _supported_diff(unsup, P, support).reshape(P.shape)),
        "csf_unsup.grad_x": rel_error(ux, _supported_diff(unsup, x, support).reshape(x.shape)),
    }


def stable_instances(make, rng, count, max_draws=None, **kwargs):
    """Run ``make`` until ``count`` support-stable instances were checked.

    Returns the worst error per key and the number of rejected draws.
    """
    max_draws = max_draws or 20 * count
    worst = {}
    done = rejected = 0
    while done < count:
        if done + rejected >= max_draws:
            raise RuntimeError(f"only {done} of {count} support-stable instances in {max_draws} draws")
        try:
            errs = make(rng, **kwargs)
        except UnstableSupport:
            rejected += 1
            continue
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
        done += 1
    return worst, rejected


def _layer_check(layer, x, rng):
    out = layer.forward(x)
    t = rng.standard_normal(out.shape)
    gx = layer.backward(out - t)
    grads = dict(layer.grads)

    def loss():
        return 0.5 * np.sum((layer.forward(x) - t) ** 2)

    errors = {f"{layer.kind}.grad_x": rel_error(gx, central_diff(loss, x).reshape(x.shape))}
    for name, p in layer.params.items():
        errors[f"{layer.kind}.grad_{name}"] = rel_error(grads[name], central_diff(loss, p).reshape(p.shape))
    return errors


def classic_layers(rng, shape=(8, 8, 2)):
    """Conv, linear, ReLU and max-pool checks on a random ``2 x shape`` batch."""
    x = rng.standard_normal((2,) + tuple(shape))
    errors = {}
    errors.update(_layer_check(Conv(shape, 3, 4, rng), x, rng))
    errors.update(_layer_check(Linear(shape, 5, rng), x, rng))
    # keep entries away from the kinks of relu and max
    xr = x + np.sign(x) * 0.1
    errors.update(_layer_check(ReLU(), xr, rng))
    xp = rng.permutation(np.arange(x.size, dtype=np.float64)).reshape(x.shape) * 0.01
    errors.update(_layer_check(MaxPool(shape, 2), xp, rng))
    return errors


def network_spot_check(rng, variant="lenet", coords=20, batch=2, **options):
    """Compare the full network's parameter gradients with central differences
    at ``coords`` random entries of every parameter tensor."""
    net = build_network(variant, seed=int(rng.integers(1 << 31)), **options)
    x = rng.random((batch,) + net.input_shape)
    y = rng.integers(0, 10, batch)
    net.forward(x, y)
    grads = {k: v.copy() for k, v in net.backward().items()}
    errors = {}
    loss = lambda: net.forward(x, y)[0]  # noqa: E731
    for name, p in net.named_params().items():
        picks = rng.choice(p.size, size=min(coords, p.size), replace=False)
        numeric = central_diff(loss, p, h=1e-5, coords=picks)
        # a step that crosses a relu or max-pool kink shows up as two step
        # sizes disagreeing; such coordinates say nothing about the gradient
        finer = central_diff(loss, p, h=1e-6, coords=picks)
        smooth = np.abs(numeric - finer) <= 1e-3 * max(np.abs(numeric).max(), 1e-8)
        errors[f"{variant}.{name}"] = rel_error(grads[name].reshape(-1)[picks][smooth], numeric[smooth])
    return errors


def run_all(seed=0, instances=50, sizes=None):
    """Every suite, as ``(kind, worst relative error, tolerance)`` rows."""
    sizes = sizes or {}
    rng = np.random.default_rng(seed)
    rows = []
    sf_err, _ = stable_instances(sf_instance, rng, instances, m=sizes.get("m", 8), K=sizes.get("K", 12))
    csf_err, _ = stable_instances(csf_instance, rng, instances, h=sizes.get("h", 6), w=sizes.get("w", 6),
                                  size=sizes.get("patch", 3), K=sizes.get("csf_K", 8))
    for errs in (sf_err, csf_err, classic_layers(rng)):
        rows += [(k, v, 1e-4) for k, v in errs.items()]
    rows += [(k, v, 1e-3) for k, v in network_spot_check(rng).items()]
    return rows
