"""Dynamic cluster-based policy learning on Hawkes-process social networks."""

__version__ = "0.1.0"
