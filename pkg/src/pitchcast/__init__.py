"""Player-conditioned next-event prediction for football event streams."""

__version__ = "0.1.0"
