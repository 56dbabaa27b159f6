"""Anti-factual multi-hop benchmark synthesis and a stratified evaluation harness."""

__version__ = "0.1.0"
