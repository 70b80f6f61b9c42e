"""Resilient motion planning with adversarial disturbance-sequence branching MPC."""

__version__ = "0.1.0"
