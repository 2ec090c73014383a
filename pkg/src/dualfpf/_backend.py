"""Select the compiled kernels when available, else the numpy fallback.

Set ``DUALFPF_PURE_PYTHON=1`` to force the fallback.
"""

import os
from types import SimpleNamespace

import numpy as np

from dualfpf import _pykernels


def _c(a):
    return None if a is None else np.ascontiguousarray(a, dtype=np.float64)


def _wrap(mod):
    # the extension takes C-contiguous float64 buffers only
    return SimpleNamespace(
        riccati_rk4=lambda A, Q, S, sigma0, dt: mod.riccati_rk4(_c(A), _c(Q), _c(S), _c(sigma0), dt),
        backward_transition_rk4=lambda M, dt: mod.backward_transition_rk4(_c(M), dt),
        affine_recursion=lambda F, b, x0: mod.affine_recursion(_c(F), _c(b), _c(x0)),
        particle_update=lambda X, F, g, kdz, zb, Bmat, zw, Wmat, dt: mod.particle_update(
            _c(X), _c(F), _c(g), _c(kdz), _c(zb), _c(Bmat), _c(zw), _c(Wmat), dt),
        moments=lambda X: mod.moments(_c(X)),
    )


if os.environ.get("DUALFPF_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from dualfpf import _kernels as _compiled
        kernels = _wrap(_compiled)
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
