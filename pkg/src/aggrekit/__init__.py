"""Data aggregation toolkit for massive IoT networks.

Three aggregation methods live in separate modules:

* :mod:`aggrekit.mobility` -- co-relative-mobility D2D clustering and
  ring-constrained multi-hop upload with energy accounting.
* :mod:`aggrekit.veracity` -- robust dominant-subspace estimation, blind gain
  recovery and true-sensor-data reconstruction (scikit-learn compatible).
* :mod:`aggrekit.federated` -- per-device LMS filters, dead-band model sharing,
  fog-side model averaging and eigenvalue perturbation budgets.

:mod:`aggrekit.datamodel` holds the shared matrix types and data generators and
:mod:`aggrekit.harness` runs configured experiments.
"""

__version__ = "0.1.0"

from .datamodel import (  # noqa: F401
    GroundTruth,
    TrafficMatrix,
    UncertaintySpec,
    center_columns,
    corrupt,
    generate_synthetic,
    ingest_table,
    low_rank_truncate,
)
from .veracity import (  # noqa: F401
    PCASubspaceEstimator,
    RobustSubspaceEstimator,
    TrueDataEstimator,
)
