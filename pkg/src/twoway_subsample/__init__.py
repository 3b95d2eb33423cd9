"""twoway-subsample - Subsampling inference for two-way clustered panels."""

__version__ = "0.1.0"
