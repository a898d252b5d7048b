"""Calibrated adversarial refinement on synthetic ambiguous prediction tasks.

A two-stage model: a calibration network predicts per-element outcome
probabilities, then a noise-driven refinement network turns those
probabilities into crisp samples whose *average* is pulled back onto the
calibrated distribution by a KL penalty while an adversary pushes each
individual sample toward realism.
"""

__version__ = "0.1.0"
