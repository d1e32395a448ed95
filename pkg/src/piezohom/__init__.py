"""Homogenized electromechanical properties of fibrous piezoelectric RVEs with contact."""

__version__ = "0.1.0"
