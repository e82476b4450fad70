"""Astrocyte-inspired synchronization of spin-orbit-torque MTJ oscillators."""

__version__ = "0.1.0"
