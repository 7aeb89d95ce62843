"""Self-trained video anomaly detection guided by scene dynamicity."""

__version__ = "0.1.0"
