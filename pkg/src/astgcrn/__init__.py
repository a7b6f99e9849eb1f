"""Adaptive graph convolutional recurrent forecasting with temporal attention."""
__version__ = "0.1.0"
