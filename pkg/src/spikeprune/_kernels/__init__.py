"""Backend selection for the fused LIF kernels.

The compiled extension is preferred when it built; otherwise the numpy
fallback is used. Set SPIKEPRUNE_BACKEND=numpy to force the fallback
(the benchmark suite does this to compare the two).
"""

import os

from . import lif_numpy

if os.environ.get("SPIKEPRUNE_BACKEND", "").lower() == "numpy":
    _impl = lif_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _lif_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = lif_numpy
        BACKEND = "numpy"

lif_forward = _impl.lif_forward
lif_backward = _impl.lif_backward
