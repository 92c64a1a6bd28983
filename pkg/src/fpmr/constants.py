"""Physical constants (CODATA 2018) and isotope data."""

import scipy.constants as _sc

HBAR = _sc.hbar
MU0 = _sc.mu_0
BOHR_MAGNETON = _sc.physical_constants["Bohr magneton"][0]
G_FREE = -_sc.physical_constants["electron g factor"][0]

# label: (multiplicity, gyromagnetic ratio in rad/s/T)
ISOTOPES = {
    "1H": (2, 267.5221874e6),
    "2H": (3, 41.065e6),
    "13C": (2, 67.2828e6),
    "14N": (3, 19.331e6),
    "15N": (2, -27.116e6),
    "19F": (2, 251.815e6),
    "31P": (2, 108.291e6),
    "E": (2, -G_FREE * BOHR_MAGNETON / HBAR),
}


def is_electron(label: str) -> bool:
    return label == "E"
