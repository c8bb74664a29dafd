"""Spectra of Laplacian matrices built from elliptic random matrices, and
their predicted limit laws."""

__version__ = "0.1.0"
