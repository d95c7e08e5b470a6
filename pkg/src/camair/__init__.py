"""camair: desk-scale NO2 inference from tokenized CCTV traffic streams."""

__version__ = "0.1.0"
