"""Sparse factorization layers for small numpy neural networks.

The elastic-net solver lives in :mod:`sfnet.elastic_net`, the SF and CSF
layers in :mod:`sfnet.sf_layer` and :mod:`sfnet.csf_layer`, networks in
:mod:`sfnet.nn` and training in :mod:`sfnet.trainer`.
"""

from .elastic_net import ElasticNetParams, SparseCode, oracle_solve, solve, solve_batch
from .nn import VARIANTS, build_network, parity_report

__all__ = ["ElasticNetParams", "SparseCode", "VARIANTS", "build_network", "oracle_solve", "parity_report",
           "solve", "solve_batch"]
__version__ = "0.1.0"
