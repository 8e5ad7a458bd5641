"""Allen–Cahn laboratory: diffuse interfaces with a prescribing function on model surfaces."""

__version__ = "0.1.0"
