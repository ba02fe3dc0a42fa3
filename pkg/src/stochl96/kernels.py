"""Backend selection for the integration kernels.

The compiled extension is used when it imports, otherwise the NumPy
implementation. Both expose ``truth_run`` and ``coarse_run``; either can be
requested explicitly with :func:`get_backend`.
"""
from . import _kernels_py

DIVERGENCE_LIMIT = _kernels_py.DIVERGENCE_LIMIT


def _load_compiled():
    try:
        from . import _kernels_c
    except ImportError:
        return None
    return _kernels_c


_compiled = _load_compiled()

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "python" if _compiled is None else "compiled"

_active = BACKENDS[BACKEND]
truth_run = _active.truth_run
coarse_run = _active.coarse_run


def get_backend(name: str):
    """Return the kernel module called ``name`` ("python" or "compiled")."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
