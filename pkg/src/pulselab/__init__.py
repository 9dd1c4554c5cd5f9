"""Sparse spike deconvolution by least-l1 fitting, with dual certificates and recovery bounds."""

__version__ = "0.1.0"
