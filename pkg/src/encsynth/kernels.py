"""Kernel selection: compiled extension when available, pure Python otherwise.

Set ``ENCSYNTH_PURE=1`` to force the pure-Python implementation.
"""

import os

from . import _purekernels as pure

compiled = None
if os.environ.get("ENCSYNTH_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

impl = compiled if compiled is not None else pure
BACKEND = "compiled" if compiled is not None else "pure"

ntt_forward = impl.ntt_forward
ntt_inverse = impl.ntt_inverse
mul_mod = impl.mul_mod
mul_scalar_mod = impl.mul_scalar_mod
zlearn_episode = impl.zlearn_episode
sample_path = impl.sample_path
