"""Compact shape representation as a difference of two scaled log-sum-exp
fields over affine terms, with a piecewise-linear tropical limit.

The pieces:

- ``field``: the model container and evaluation (smooth and tropical).
- ``init``: geometric initialization from oriented samples, plus exact
  grid and hex constructions from inside/outside oracles.
- ``train``: gradient-descent fitting with progressive pruning.
- ``extract``: marching squares/cubes and exact tropical cell extraction.
- ``metrics``: Chamfer / Hausdorff / F-score between point sets.
- ``io``: checkpoints, meshes, point clouds, reports, run manifests.
- ``cli``: the ``patchwork`` command.
"""

from .errors import PatchworkError
from .field import (MINUS, PLUS, PatchworkModel, batch_values, eval_field,
                    eval_tropical, tropical_argmax, tropical_grad)
from .init import (OrientedSampleSet, digital_curve_grid, digital_curve_hex,
                   digital_surface_grid, geometric_init, make_oracle,
                   random_init)
from .train import FitConfig, FitReport, fit, parameter_count
from .extract import (ExtractedComplex, Mesh, ScalarGrid, extract_tropical,
                      marching_cubes, marching_cubes_field, marching_squares,
                      sample_grid)
from .metrics import (MetricReport, chamfer, compare_point_sets, fscore,
                      hausdorff, sample_mesh_surface)
from .io import (load_checkpoint, load_mesh, load_point_cloud,
                 normalize_to_box, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "PLUS", "MINUS", "PatchworkModel", "eval_field", "eval_tropical",
    "tropical_grad", "tropical_argmax", "batch_values",
    "OrientedSampleSet", "geometric_init", "random_init", "make_oracle",
    "digital_curve_grid", "digital_curve_hex", "digital_surface_grid",
    "FitConfig", "FitReport", "fit", "parameter_count",
    "ScalarGrid", "Mesh", "ExtractedComplex", "sample_grid",
    "marching_squares", "marching_cubes", "marching_cubes_field",
    "extract_tropical",
    "MetricReport", "chamfer", "hausdorff", "fscore", "compare_point_sets",
    "sample_mesh_surface",
    "save_checkpoint", "load_checkpoint", "load_mesh", "load_point_cloud",
    "normalize_to_box",
    "PatchworkError",
    "__version__",
]
