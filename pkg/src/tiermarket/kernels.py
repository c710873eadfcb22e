"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the pure numpy
fallback. Set TIERMARKET_PURE_PYTHON=1 to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("TIERMARKET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback

greedy_fill = _impl.greedy_fill
best_ordering = _impl.best_ordering
han_project = _impl.han_project
gradient_steps = _impl.gradient_steps
