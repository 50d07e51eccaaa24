"""Belief diffusions on hypergraphs: homology of the nerve, Bethe free energies
and their singularities."""

__version__ = "0.1.0"
