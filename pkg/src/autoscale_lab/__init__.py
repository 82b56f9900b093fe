"""Trace-driven serverless autoscaling lab: simulator, DRQN controller, threshold baselines, decision ledger."""

__version__ = "0.1.0"
