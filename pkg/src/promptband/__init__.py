"""Multi-fidelity Bayesian optimization and benchmarking for prompt selection."""

__version__ = "0.1.0"
