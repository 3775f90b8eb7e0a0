"""Physically consistent building models, a zone control environment, TD3 and
rule-based controllers, and a perfect-foresight LP oracle for benchmarking them."""

__version__ = "0.1.0"
