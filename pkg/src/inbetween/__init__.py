"""Phase-aware neural motion in-betweening."""

__version__ = "0.1.0"
