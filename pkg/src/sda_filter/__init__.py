"""False discovery rate control under dependence by symmetrized data aggregation."""

__version__ = "0.1.0"
