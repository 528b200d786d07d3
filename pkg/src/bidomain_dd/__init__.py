"""Implicit bidomain solver with BDDC and FETI-DP interface preconditioners."""
__version__ = "0.1.0"
