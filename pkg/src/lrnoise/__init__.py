"""Low-light raw noise synthesis and evaluation."""
__version__ = "0.1.0"
