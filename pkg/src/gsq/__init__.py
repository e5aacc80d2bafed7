"""Graph sequences, coarse invariants and the constructions around cost and amenability."""

__version__ = "0.1.0"
