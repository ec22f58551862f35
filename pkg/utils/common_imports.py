"""
Common imports module for QubitThermo
Centralizes frequently used imports, the exception hierarchy and shared constants.
"""

# Standard library imports
import os
import sys
import json
import csv
import math
import shutil
from datetime import datetime
from typing import Dict, Any, List, Optional, Sequence, Tuple, Union
from collections import defaultdict
from dataclasses import dataclass, asdict, field, replace

# Numerical stack
import numpy as np


# Common exceptions for standardized error handling
class QubitThermoError(Exception):
    """Base exception for the QubitThermo toolkit"""
    pass


class DomainError(QubitThermoError):
    """Exception for mathematical domain violations (|P| > 1, epsilon <= 0, zero fields)"""
    pass


class StateError(DomainError):
    """Exception for density matrices that are not Hermitian or not physical"""

    def __init__(self, message: str, anti_hermitian_norm: float = 0.0):
        super().__init__(message)
        self.anti_hermitian_norm = anti_hermitian_norm


class IntegrationError(QubitThermoError):
    """Exception for integrator failures; carries the time at which the solver gave up"""

    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


class CascadeError(QubitThermoError):
    """Exception for superadiabatic frame requests that cannot be served"""
    pass


class GridMismatchError(QubitThermoError):
    """Exception for comparisons between maps built on different grids"""
    pass


class ConfigurationError(QubitThermoError):
    """Exception for configuration-related errors"""
    pass


class ExportError(QubitThermoError):
    """Exception for output files that could not be written"""
    pass


# Numerical tolerances shared across modules
NORM_TOLERANCE = 1e-9          # allowed |P| excess over 1 before a state is rejected
NORM_CLAMP = 1e-12             # |P| within this of 1 is treated as exactly pure
HERMITIAN_TOLERANCE = 1e-12
EIGENSTATE_TOLERANCE = 1e-6

LN2 = math.log(2.0)
INF = float("inf")

# Output format versioning
SCHEMA_VERSION = "1.0"
FLOAT_FORMAT = "{:.12e}"

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
PAULIS = (PAULI_X, PAULI_Y, PAULI_Z)
