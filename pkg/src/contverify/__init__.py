"""Safety verification of ReLU networks with reusable proofs."""

__version__ = "0.1.0"
