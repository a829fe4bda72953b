"""Interaction-aware highway lane-change behavior prediction.

Pipeline pieces: a small float64 autodiff core (``numerics``), trajectory
and dataset contracts (``datamodel``), a rule-based traffic generator
(``simulator``), sample assembly (``features``), the interaction network
and its maneuver-only baseline (``model``), a seeded training loop
(``training``), the metric suite (``evaluation``), and a CLI (``cli``).
"""

__version__ = "0.1.0"
