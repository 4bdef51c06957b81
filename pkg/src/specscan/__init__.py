"""Inspection planning and defect localisation for specular parts.

CAD mesh in, scan path and defect map out; hardware is replaced by the
simulators in :mod:`specscan.sim`.
"""

__version__ = "0.1.0"
