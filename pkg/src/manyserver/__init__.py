"""Simulation and Lyapunov verification lab for many-server queues with
phase-type service and abandonment in the Halfin-Whitt regime.

Modules: :mod:`phasetype` (service laws), :mod:`cqlf` (common quadratic
Lyapunov matrix), :mod:`lyapunov`, :mod:`psi` (the path map),
:mod:`fluid`, :mod:`des` (discrete-event simulator), :mod:`diffusion`
(piecewise OU limit), :mod:`harris` (recurrence constants), :mod:`stats`
and :mod:`cli`.
"""
__version__ = "0.1.0"

from . import _backend  # noqa: E402

BACKEND = _backend.NAME

__all__ = ["__version__", "BACKEND"]
