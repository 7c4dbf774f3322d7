"""Modular PSO laboratory: benchmark harness, module-effect analysis, clustering."""

__version__ = "0.1.0"
