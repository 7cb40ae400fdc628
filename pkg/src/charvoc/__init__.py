"""Character-conditioned neural vocoder for content-preserving voice anonymisation."""

__version__ = "0.1.0"
