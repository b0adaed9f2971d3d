"""Finite element solver for Cahn-Hilliard two-phase flow in coupled conduit and porous-matrix domains."""

__version__ = "0.1.0"
