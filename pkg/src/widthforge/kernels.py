"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set ``WIDTHFORGE_PURE=1`` to force the fallback (used by the benchmark and by
the backend-agreement tests).
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("WIDTHFORGE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def backends():
    """Mapping of available backend names to kernel modules."""
    out = {"python": _fallback}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def singular_values(mats):
    """Descending singular values of each matrix in a (m, n, n) stack."""
    return _impl.singular_values(np.asarray(mats, dtype=float))


def topk_product(mats, k):
    """Product of the k largest singular values of each matrix."""
    sv = singular_values(mats)
    if k == 0:
        return np.ones(sv.shape[0])
    return np.prod(sv[:, :k], axis=1)


def locate_simplices(points, inv, origin, tol=1e-12):
    return _impl.locate_simplices(
        np.ascontiguousarray(points, dtype=float),
        np.ascontiguousarray(inv, dtype=float),
        np.ascontiguousarray(origin, dtype=float),
        float(tol),
    )


def clip_halfplanes(coef, box):
    return _impl.clip_halfplanes(np.ascontiguousarray(coef, dtype=float), float(box))
