"""Cost accounting and benchmarks for machine-learned and classical force fields.

The main entry points:

- :mod:`~mlffbench.system` polyalanine workloads, solvation and XYZ I/O
- :mod:`~mlffbench.neighbors` cell-list and brute-force pair lists
- :mod:`~mlffbench.aev` atomic environment vectors and their adjoint
- :mod:`~mlffbench.nnp` per-element network ensembles (``AniPotential``)
- :mod:`~mlffbench.et` an equivariant transformer (``EtPotential``)
- :mod:`~mlffbench.cff` a classical force field (``CffPotential``)
- :mod:`~mlffbench.costmodel` closed-form cost predictions and ratios
- :mod:`~mlffbench.md` velocity-Verlet dynamics over composed providers
- :mod:`~mlffbench.bench` and :mod:`~mlffbench.cli` the benchmark harness
"""
from .aev import AevParams, compute_aev, aev_backward
from .cff import CffParams, CffPotential, assign_default_params, cff_energy_forces
from .costmodel import mlff_vs_cff_ratio
from .counters import OpCounters, StageCounts
from .errors import (ConfigurationError, DivergenceError, SingularityError, StaleTapeError,
                     UnsupportedSpeciesError)
from .et import EtParams, EtPotential, init_et
from .md import SimConfig, compose_forces, integrate, minimize, ns_per_day
from .neighbors import build_pairs, build_triplets
from .nnp import AniPotential, NnpModel, count_nnp_ops, init_model
from .potential import PotentialResult
from .system import AtomicSystem, WorkloadSpec, generate_polyalanine, make_system, read_system, solvate, write_system

__version__ = "0.1.0"
