"""Multi-subject sparse VAR: debiased per-subject fits, robust fusion, and path tests."""

__version__ = "0.1.0"
