"""Convolutional sparse factorization (CSF) layer.

Every overlapping ``h_Q x w_Q`` patch of an ``h x w x c`` image is coded
against one shared dictionary with the SF machinery; the codes are laid out
as an ``(h - h_Q + 1) x (w - w_Q + 1) x K`` tensor, the shape a valid
convolution with K kernels would give. Patch gradients are summed over all
patches; the input gradient is the overlap-add of per-patch gradients.

Patches are vectorized in (row, column, channel) order, so dictionary row
``(dr * w_Q + dc) * c + ch`` pairs with pixel offset ``(dr, dc)`` and channel
``ch``. Images are stored batch-first as ``(N, h, w, c)``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import sf_layer
from .elastic_net import ElasticNetError


@dataclass(frozen=True)
class PatchGeometry:
    h: int
    w: int
    c: int
    hq: int
    wq: int

    def __post_init__(self):
        if min(self.h, self.w, self.c, self.hq, self.wq) < 1:
            raise ValueError(f"all extents must be positive: {self}")
        if self.hq > self.h or self.wq > self.w:
            raise ValueError(f"patch {self.hq}x{self.wq} does not fit in a {self.h}x{self.w} image")

    @property
    def out_h(self):
        return self.h - self.hq + 1

    @property
    def out_w(self):
        return self.w - self.wq + 1

    @property
    def patch_dim(self):
        return self.hq * self.wq * self.c

    @property
    def n_patches(self):
        return self.out_h * self.out_w


@dataclass
class CsfContext:
    """Per-patch SF context for a batch, patches in row-major order."""

    sf: sf_layer.SfContext
    geometry: PatchGeometry
    batch: int


def _check(images, geom):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (geom.h, geom.w, geom.c):
        raise ValueError(f"images of shape {images.shape[1:]} do not match geometry "
                         f"{(geom.h, geom.w, geom.c)}")
    return images


def extract_patches(images, geom):
    """All valid patches, vectorized.

    Returns an array of shape ``(N, out_h, out_w, patch_dim)`` (without the
    leading axis when given a single image).
    """
    single = np.ndim(images) == 3
    images = _check(images, geom)
    win = sliding_window_view(images, (geom.hq, geom.wq), axis=(1, 2))
    # (N, out_h, out_w, c, hq, wq) -> (N, out_h, out_w, hq, wq, c)
    patches = win.transpose(0, 1, 2, 4, 5, 3).reshape(
        images.shape[0], geom.out_h, geom.out_w, geom.patch_dim)
    return patches[0] if single else patches


def overlap_add(patch_grads, geom):
    """Scatter per-patch vectors back onto their source pixels, summing overlaps."""
    N = patch_grads.shape[0]
    g = patch_grads.reshape(N, geom.out_h, geom.out_w, geom.hq, geom.wq, geom.c)
    out = np.zeros((N, geom.h, geom.w, geom.c))
    for dr in range(geom.hq):
        for dc in range(geom.wq):
            out[:, dr:dr + geom.out_h, dc:dc + geom.out_w, :] += g[:, :, :, dr, dc, :]
    return out


def csf_forward(images, P, params, geom, threads=1):
    """Code every patch of every image.

    Returns
    -------
    codes : ndarray, shape (N, out_h, out_w, K)
    ctx : CsfContext
    """
    if P.shape[0] != geom.patch_dim:
        raise ValueError(f"dictionary has {P.shape[0]} rows, patches have {geom.patch_dim}")
    patches = extract_patches(_check(images, geom), geom)
    N = patches.shape[0]
    flat = patches.reshape(-1, geom.patch_dim)
    try:
        codes, ctx = sf_layer.sf_forward(flat, P, params, threads=threads)
    except ElasticNetError as err:
        row = getattr(err, "row", None)
        if row is None:
            raise
        n, rem = divmod(row, geom.n_patches)
        r, s = divmod(rem, geom.out_w)
        raise ElasticNetError(f"image {n}, patch ({r}, {s}): {err}", alpha=err.alpha, kkt=err.kkt) from err
    K = P.shape[1]
    return codes.reshape(N, geom.out_h, geom.out_w, K), CsfContext(ctx, geom, N)


def csf_backward(ctx, P, grad_a):
    """Patch-summed dictionary gradient and overlap-added input gradient."""
    K = P.shape[1]
    g = np.asarray(grad_a, dtype=np.float64)
    expected = (ctx.batch, ctx.geometry.out_h, ctx.geometry.out_w, K)
    if g.shape != expected:
        raise ValueError(f"gradient shape {g.shape} does not match output {expected}")
    grad_P, grad_patches = sf_layer.sf_backward(ctx.sf, P, g.reshape(-1, K))
    return grad_P, overlap_add(grad_patches.reshape(ctx.batch, ctx.geometry.n_patches, -1), ctx.geometry)


def unsup_loss(ctx):
    return sf_layer.unsup_loss(ctx.sf)


def unsup_grads(ctx):
    grad_P, grad_patches = sf_layer.unsup_grads(ctx.sf)
    return grad_P, overlap_add(grad_patches.reshape(ctx.batch, ctx.geometry.n_patches, -1), ctx.geometry)
