"""Continuous-state branching processes with multiplicative catastrophes.

Quenched survival along sampled environments (closed forms for stable
mechanisms, a backward ODE otherwise), annealed Monte Carlo with Esscher
tilting, regime classification and a cell-infection model.
"""
from .env import Atom, EnvironmentSpec, JumpPath, phi, phi_K, sample_path, sample_paths
from .kernels import BACKEND
from .mechanisms import GeneralMechanism, StableMechanism
from .quenched_stable import quenched_laplace, quenched_survival
from .regimes import classify

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "EnvironmentSpec",
    "JumpPath",
    "GeneralMechanism",
    "StableMechanism",
    "phi",
    "phi_K",
    "sample_path",
    "sample_paths",
    "quenched_survival",
    "quenched_laplace",
    "classify",
    "BACKEND",
    "__version__",
]
