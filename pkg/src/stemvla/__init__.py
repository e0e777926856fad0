"""StemVLA-style policy learning on a deterministic synthetic tabletop world."""

__version__ = "0.1.0"
