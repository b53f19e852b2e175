"""Imaging amplitude objects through dynamic scattering with entangled photon pairs."""
from .grid import BiphotonState, Direction, Domain, GridSpec, fourier_2d, make_grid, to_momentum, to_position
from .source import SourceParams, make_source
from .screens import ScreenParams, characterize_screens, generate_screen, segments_for_strength
from .pipeline import Configuration, PipelineConfig, aperture_array, ground_truth, lines_object, run_ensemble
from .coincidence import CoincidenceMatrix, marginal, postselect, postselect_sum, sample_pairs
from .metrics import MetricsReport, estimate_strength, mtf, predict_ratio, rms

__version__ = "0.1.0"
