"""Cutting-plane lower bounds for AC optimal power flow.

The base relaxation is linear; conic constraints of the Jabr and current
formulations and thermal limits are imposed lazily through outer-envelope
cuts, which can be archived and re-used on perturbed instances.
"""

from .caseio import PerturbationSpec, load_network, perturb_loads
from .cuts import CutArchive, CutManager, load_archive, save_archive
from .driver import AlgorithmParams, RunReport, cutplane, solve_case, warm_start
from .grid import Network, branch_admittance
from .relaxation import BuildOptions, build_base_model

__all__ = [
    "AlgorithmParams", "BuildOptions", "CutArchive", "CutManager", "Network",
    "PerturbationSpec", "RunReport", "branch_admittance", "build_base_model", "cutplane",
    "load_archive", "load_network", "perturb_loads", "save_archive", "solve_case",
    "warm_start",
]

__version__ = "0.1.0"
