"""Datapath compiler and multi-tier simulator for parametrized floating-point kernels."""

__version__ = "0.1.0"
