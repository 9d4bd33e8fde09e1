"""Kernel backend selection.

The compiled extension (``bpurf._native``) is preferred; the numpy fallback
(``bpurf._purepy``) is used when the extension is unavailable or when
``BPURF_PURE=1`` is set. Both expose the same functions with identical
semantics.
"""

import os

from . import _purepy

if os.environ.get("BPURF_PURE", "") == "1":
    _impl = _purepy
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _purepy

BACKEND = _impl.BACKEND

point_in_polygon = _impl.point_in_polygon
points_in_polygon = _impl.points_in_polygon
dtw_distance = _impl.dtw_distance
rtree_query = _impl.rtree_query
rtree_query_rect = _impl.rtree_query_rect
rtree_knn = _impl.rtree_knn
expand_virtual = _impl.expand_virtual
collect_induced = _impl.collect_induced
extract_core = _impl.extract_core


def backends():
    """The available backends, compiled one first."""
    impls = {}
    try:
        from . import _native

        impls["native"] = _native
    except ImportError:
        pass
    impls["pure"] = _purepy
    return impls
