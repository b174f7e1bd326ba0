"""Two-hand 3D recovery toolkit: hand model, coordinate spaces, TransNet and harness."""

__version__ = "0.1.0"
