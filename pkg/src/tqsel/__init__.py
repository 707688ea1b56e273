"""Text-queried target sound event localization toolkit."""

__version__ = "0.1.0"
