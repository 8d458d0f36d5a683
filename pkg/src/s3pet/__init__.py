"""Two-stage semi-supervised standard-dose PET reconstruction at desk scale."""

__version__ = "0.1.0"
