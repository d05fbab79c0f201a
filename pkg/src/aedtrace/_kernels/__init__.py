"""Hot numerical kernels with a compiled backend and a numpy fallback.

The Cython extension ``_core`` is used when it was built; otherwise the
pure-Python ``_fallback`` module is used.  Set ``AEDTRACE_PURE_PYTHON=1``
to force the fallback.

Kernels
-------
smo_solve
    SMO solver for the C-SVC dual on a precomputed kernel matrix.
signed_rank_counts
    Null distribution counts of the Wilcoxon signed-rank statistic.
rank_sum_counts
    Null distribution counts of a two-sample rank sum.
"""

import os

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_BACKENDS = {"python": _fallback}
if _core is not None:
    _BACKENDS["cython"] = _core

if os.environ.get("AEDTRACE_PURE_PYTHON", "") not in ("", "0") or _core is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = _BACKENDS[BACKEND]
smo_solve = _impl.smo_solve
signed_rank_counts = _impl.signed_rank_counts
rank_sum_counts = _impl.rank_sum_counts


def available_backends():
    return sorted(_BACKENDS)


def backend_module(name):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None
