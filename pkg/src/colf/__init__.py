"""Leader-follower multi-robot transport with a consistency-enhancing auxiliary loss."""

__version__ = "0.1.0"
