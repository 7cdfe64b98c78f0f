"""Enthalpy finite-difference solver and boundary-flux identification for the
one-dimensional multiphase Stefan problem."""

__version__ = "0.1.0"
