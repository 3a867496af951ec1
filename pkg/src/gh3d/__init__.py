"""Composable hair/face Gaussian head generation at desk scale."""

__version__ = "0.1.0"
