"""Reconstruction of smoke density and velocity fields from sparse
multi-view image sequences, with physics-based training losses."""

__version__ = "0.1.0"
