"""Per-timestep network performance prediction for flights over a GEO satellite network."""

__version__ = "0.1.0"
