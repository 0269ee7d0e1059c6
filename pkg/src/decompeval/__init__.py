"""Workbench for assembly-to-Dart/Swift decompilation experiments."""

__version__ = "0.1.0"
