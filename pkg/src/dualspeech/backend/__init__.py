"""Kernel backend selection.

The compiled Cython extension is preferred when importable; otherwise
the pure-numpy fallback is used.  ``DUALSPEECH_KERNELS`` overrides the
choice: ``compiled`` (require the extension), ``python`` (force the
fallback), or ``auto`` (default).
"""

import os

from . import numpy_kernels

_choice = os.environ.get("DUALSPEECH_KERNELS", "auto").lower()

if _choice not in ("auto", "compiled", "python"):
    raise ValueError(
        f"DUALSPEECH_KERNELS must be auto, compiled or python, got {_choice!r}")

if _choice == "python":
    kernels = numpy_kernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "DUALSPEECH_KERNELS=compiled but the _ckernels extension "
                "is not built; run `pip install -e . --no-build-isolation`")
        kernels = numpy_kernels

BACKEND = kernels.NAME

layer_norm_fwd = kernels.layer_norm_fwd
layer_norm_bwd = kernels.layer_norm_bwd
masked_softmax_fwd = kernels.masked_softmax_fwd
masked_softmax_bwd = kernels.masked_softmax_bwd
scatter_add_rows = kernels.scatter_add_rows

# The convolution is five BLAS matmuls in the numpy formulation, which
# beats the compiled scalar loops at training channel widths (see
# benchmarks/bench_kernels.py); both backends use it.
conv1d_fwd = numpy_kernels.conv1d_fwd
conv1d_bwd = numpy_kernels.conv1d_bwd
