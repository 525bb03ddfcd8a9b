"""Simulator, dataset I/O, end-to-end orchestration and evaluation."""
