"""Tracking-by-detection with a recurrent mixture-density trajectory estimator."""

__version__ = "0.1.0"
