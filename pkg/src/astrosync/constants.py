"""Physical constants (SI) and unit helpers."""

import math

MU0 = 4e-7 * math.pi            # vacuum permeability [H/m]
GAMMA = 1.76e11                 # gyromagnetic ratio [rad s^-1 T^-1]
Q_E = 1.602176634e-19           # elementary charge [C]
MU_B = 9.2740100783e-24         # Bohr magneton [J/T]
K_B = 1.380649e-23              # Boltzmann constant [J/K]

OE_TO_A_PER_M = 1000.0 / (4.0 * math.pi)


def oe_to_a_per_m(h_oe):
    """Convert a field in oersted to A/m."""
    return h_oe * OE_TO_A_PER_M


def a_per_m_to_oe(h):
    return h / OE_TO_A_PER_M
