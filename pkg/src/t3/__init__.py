"""Oblivious UTXO lookups for SPV clients over a two-tree ORAM store."""

__version__ = "0.1.0"
