"""Visual-reference prompt encoder for a frozen SAM-style mask decoder, at desk scale."""

__version__ = "0.1.0"
