"""Experiment orchestration, fits and reporting."""
