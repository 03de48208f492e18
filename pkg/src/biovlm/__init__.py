"""BioVLM: prompt-bank learning over frozen encoders.

Learns a diverse bank of prompts per class against frozen text/image
encoders, selects low-entropy (high-confidence) prompts per input at a
percentile cutoff, and trains with a composite objective combining
cross-entropy, attribute-semantic alignment, low-entropy regularization,
and cross-modal distillation. Ships evaluation harnesses for few-shot,
base-to-new, and out-of-distribution protocols plus calibration metrics.
"""

from ._kernels import active_backend

__version__ = "0.1.0"
__all__ = ["active_backend", "__version__"]
