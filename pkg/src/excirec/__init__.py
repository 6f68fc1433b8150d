"""Near-field spectra of molecular aggregates and their inversion to exciton wave functions."""

__version__ = "0.1.0"
