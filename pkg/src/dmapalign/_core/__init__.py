"""Distance-kernel core: compiled extension when available, NumPy otherwise.

Set ``DMAPALIGN_PURE_PYTHON=1`` to force the NumPy implementation even when
the compiled extension is installed (used by the benchmark and the
equivalence tests).
"""

import os

from . import pairwise_numpy

HAVE_COMPILED = False
if os.environ.get("DMAPALIGN_PURE_PYTHON", "") not in ("", "0"):
    pairwise_quadratic_sq = pairwise_numpy.pairwise_quadratic_sq
else:
    try:
        from ._pairwise import pairwise_quadratic_sq

        HAVE_COMPILED = True
    except ImportError:
        pairwise_quadratic_sq = pairwise_numpy.pairwise_quadratic_sq

__all__ = ["pairwise_quadratic_sq", "pairwise_numpy", "HAVE_COMPILED"]
