"""Admissibility certificates for power-injection uncertainty sets on single-phase grids.

Typical use::

    from gridcert import grids, pipeline
    from gridcert.constraints import SecuritySpec
    from gridcert.uncertainty import UncertaintySet

    model = grids.two_bus()
    security = SecuritySpec.uniform(model, 0.9, 1.1, 10.0)
    verdict = pipeline.test_admissibility(model, security, model.w, UncertaintySet.box([-0.05], [0]))
"""

__version__ = "0.1.0"

from .errors import GridCertError  # noqa: E402
from .grid import BranchSpec, GridModel, build_grid  # noqa: E402

__all__ = ["BranchSpec", "GridCertError", "GridModel", "build_grid", "__version__"]
