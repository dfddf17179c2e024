"""
Synthetic MNIST variations
==========================

Three harder versions of the digits: random rotation, uniform noise behind
the strokes, and photographs behind the strokes. A background pixel survives
only where ``0.8 * background`` is brighter than the digit. Needs the
``mlxtend`` package for the bundled 5000-digit subset; with real MNIST files
use ``sfnet datagen`` instead.
"""

import numpy as np

from sfnet.data import default_background_pool, make_variation, mlxtend_subset

digits = mlxtend_subset().take(np.arange(0, 5000, 500)[:3])
pool = default_background_pool()


def ascii(img, width=28):
    shades = " .:-=+*#%@"
    return "\n".join("".join(shades[min(int(v * 10), 9)] for v in row[:width]) for row in img)


for kind in ("rot", "rand", "img"):
    varied = make_variation(digits, kind, seed=0, background_pool=pool)
    print(f"--- {kind} (label {varied.labels[0]}) ---")
    print(ascii(varied.images[0, ..., 0]))
    print("provenance:", {k: v for k, v in varied.provenance.items() if k != "note"})
