"""segforge: segment disclosure extraction and comparability for Form 10-K filings."""

__version__ = "0.1.0"
