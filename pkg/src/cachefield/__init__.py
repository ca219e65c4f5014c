"""State-transition field analysis of cache replacement schemes under IRM."""

__version__ = "0.1.0"
