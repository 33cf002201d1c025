"""RIS-enabled user self-localization: models, bounds and estimators."""

from .codebooks import PhaseSchedule, directional_codebook, random_codebook, remove_multipath
from .estimator import EstimatorConfig, EstimateReport, localize
from .fisher import FimReport, ParameterVector, position_bound
from .geometry import RisGeometry, build_geometry, far_field_response, ris_response
from .signal import PathSet, ReceivedFrame, SystemConfig, synthesize_frame

__version__ = "0.1.0"
