"""Physics-motivated CSI data augmentation for indoor localization."""

from .augment import AugmentPlan, augment, augment_amplitude, augment_noise, augment_phase, phase_of_draws
from .channel_sim import (
    AntennaPattern,
    Mpc,
    NonidealityProfile,
    Scenario,
    apply_nonideality,
    channel_response,
    default_scenario,
    synthesize_dataset,
)
from .core import CsiSample, Dataset, Location, TensorDims, slice_ap, validate
from .io import ReportRow, ingest_raw, read_csid, read_report, write_csid, write_report

__version__ = "0.1.0"
