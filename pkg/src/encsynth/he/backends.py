"""Server-side evaluator construction from public evaluation keys."""

from __future__ import annotations

import json

from .core import BACKEND_TAGS, EMULATOR, EXACT, RLWE, Evaluator, HeProfile
from .plain import EmulatorEvaluator, ExactEvaluator, NoiseModel


def make_evaluator(backend, profile: HeProfile, eval_key: bytes = b"") -> Evaluator:
    """Build the public evaluator for ``backend`` (tag or name).

    The emulator key carries its noise parameters and noise seed; the RLWE key
    is the serialized relinearization key.
    """
    tag = BACKEND_TAGS[backend] if isinstance(backend, str) else int(backend)
    if tag == EXACT:
        return ExactEvaluator(profile)
    if tag == EMULATOR:
        d = json.loads(eval_key) if eval_key else {}
        noise = NoiseModel(d.get("sigma_op", NoiseModel().sigma_op), d.get("rescale_error", 0.0))
        return EmulatorEvaluator(profile, noise, d.get("seed", 0))
    if tag == RLWE:
        from ..rlwe.evaluator import RlweEvaluator

        return RlweEvaluator.from_eval_key(profile, eval_key)
    raise ValueError(f"unknown backend {backend!r}")
