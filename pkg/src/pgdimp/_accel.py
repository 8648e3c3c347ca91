"""Numba availability and the pure-numpy override.

Set ``PGDIMP_DISABLE_NUMBA=1`` to force the numpy kernels even when numba
is importable.
"""

import os
from typing import Any, Callable

_FLAG = "PGDIMP_DISABLE_NUMBA"


def _disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*args: Any, **kwargs: Any) -> Any:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _disabled()


def njit(fn: Callable) -> Callable:
    """Compile ``fn`` in nopython mode with an on-disk cache.

    fastmath stays off so reductions keep their written order.
    """
    return _njit(cache=True, nogil=True)(fn)
