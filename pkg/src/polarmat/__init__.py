"""End-to-end optimization of polarimetric measurement plans and a material classifier."""

__version__ = "0.1.0"
