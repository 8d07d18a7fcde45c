"""PDE benchmark generators, reference solvers and dataset files."""

from .coefficients import (gen_trig_coefficient, sample_grf_neumann, sample_grf_periodic, sample_grf_twophase,
                           sample_lognormal, trig_coefficient_from)
from .dataset import (BENCHMARKS, Dataset, EllipticSpec, build_dataset, generate_sample, inverse_dataset,
                      ns_windows, preset, read_dataset, regenerate, save_splits, split_paths, write_dataset)
from .elliptic import SolverError, solve_elliptic_fd
from .fields import GridField, add_noise, downsample_field
from .navier_stokes import CFLError, NSSpec, solve_ns_vorticity

__all__ = [
    "BENCHMARKS", "CFLError", "Dataset", "EllipticSpec", "GridField", "NSSpec", "SolverError", "add_noise",
    "build_dataset", "downsample_field", "gen_trig_coefficient", "generate_sample", "inverse_dataset",
    "ns_windows", "preset", "read_dataset", "regenerate", "sample_grf_neumann", "sample_grf_periodic",
    "sample_grf_twophase", "sample_lognormal", "save_splits", "solve_elliptic_fd", "split_paths",
    "trig_coefficient_from", "write_dataset",
]
