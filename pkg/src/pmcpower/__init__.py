"""DVFS-aware, PMC-based power modeling: characterization, non-negative
training, LUT composition, and fixed-point moving-window replay."""

__version__ = "0.1.0"
