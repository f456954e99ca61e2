"""Backend selection for the random kernels.

The compiled extension is used when importable. Set ``MULTIGEN_BACKEND=python``
to force the NumPy fallback (benchmarks and equivalence tests do this).
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MULTIGEN_BACKEND", "").lower() != "python":
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


seed_key = _impl.seed_key
raw_bits = _impl.raw_bits
normals = _impl.normals
mixed_normals = _impl.mixed_normals
