"""Numerical toolkit for homogenization of integral functionals with
Orlicz growth: Young functions, oscillating fields, two-scale Young
measures, quasiconvex envelopes, cell problems and Gamma-limit tables."""

__version__ = "0.1.0"
