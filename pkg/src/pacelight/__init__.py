"""Cross-axis factorized neural operator for frequency-domain optical field
prediction, with an FDFD Maxwell solver as data generator and oracle."""

__version__ = "0.1.0"
