"""Change-detection flood mapping from paired SAR backscatter scenes."""

__version__ = "0.1.0"
