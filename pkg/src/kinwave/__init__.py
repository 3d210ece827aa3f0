"""Disordered harmonic lattice waves and their kinetic (linear Boltzmann) limit."""

__version__ = "0.1.0"
