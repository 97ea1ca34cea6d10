"""Wideband R/L extraction for conductors described by closed triangle meshes.

Pipeline: ``mesh`` (load and validate) -> ``circuit`` (graph, spanning
forest, loop matrix) -> ``assembly`` / ``pfft`` (branch impedance) ->
``solver`` (preconditioned loop system) -> ``extract`` (port impedance,
fields, sweeps).
"""

import os

if "NUMBA_THREADING_LAYER" not in os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    import numba

    # an outdated system TBB only produces a warning; try OpenMP first
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .assembly import Material, surface_impedance, skin_depth  # noqa: E402
from .circuit import PortSpec  # noqa: E402
from .errors import SierlError  # noqa: E402
from .extract import ImpedanceResult, build_model, frequency_sweep  # noqa: E402
from .mesh import SurfaceMesh, build_edges, load_mesh  # noqa: E402

__all__ = [
    "Material",
    "PortSpec",
    "SierlError",
    "ImpedanceResult",
    "SurfaceMesh",
    "build_edges",
    "build_model",
    "frequency_sweep",
    "load_mesh",
    "skin_depth",
    "surface_impedance",
]

__version__ = "0.1.0"
