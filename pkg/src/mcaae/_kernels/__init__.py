"""Hot-kernel backend selection.

Imports the compiled Cython kernels when the extension is built, otherwise
falls back to the vectorized NumPy twins. Both backends expose the same
functions with the same semantics; `BACKEND` reports which one is active.

Set MCAAE_BACKEND=numpy to force the fallback, MCAAE_BACKEND=compiled to
make a missing extension an import error instead of a silent fallback.
"""

import os

from . import _numpy

_requested = os.environ.get("MCAAE_BACKEND", "auto").strip().lower()

if _requested in ("auto", "compiled"):
    try:
        from . import _cykernels as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _numpy
        BACKEND = "numpy"
elif _requested in ("numpy", "python"):
    _impl = _numpy
    BACKEND = "numpy"
else:
    raise RuntimeError(
        f"unrecognized MCAAE_BACKEND={_requested!r}; use 'auto', 'compiled' or 'numpy'"
    )

adam_update = _impl.adam_update
ssim_values = _impl.ssim_values
ssim_values_and_grad = _impl.ssim_values_and_grad
blur_separable = _impl.blur_separable

numpy_backend = _numpy
