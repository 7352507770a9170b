"""Drought forecasting from vegetation and rainfall indices.

GAM screening of two-variable lagged models followed by repeated-partition
ANN training and drought-phase evaluation.
"""

__version__ = "0.1.0"
