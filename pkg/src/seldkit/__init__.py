"""ACCDOA sound event localisation and detection toolkit."""

__version__ = "0.1.0"
