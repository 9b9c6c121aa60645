"""mfg-epi - multi-population mean field game solver for SIR/SIRD epidemics."""

__version__ = "1.0.0"
__author__ = "mfg-epi developers"
__description__ = "Nash equilibrium socialization and vaccination in heterogeneous epidemics"
