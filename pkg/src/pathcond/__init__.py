"""Path-conditioned rescaling of DAG ReLU networks."""

__version__ = "0.1.0"
