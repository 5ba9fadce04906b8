"""Multispectral video fusion for non-contact respiratory monitoring.

Three respiratory signals (thermal airflow plus NIR/FIR chest motion) are
extracted from synchronized camera streams, turned into per-window rate and
quality estimates, fused by an SNR-weighted median, and arbitrated against
an SVM-ensemble apnea detector into one respiratory-activity readout.
"""

from .core import (APNEA_TASKS, CAMERA_SOURCES, DETECTOR_TRAIN_TASKS,
                   FrameSequence, RespSignal, SignalSource, Spectrum, Task,
                   Window, pool_segments, slide_windows)
from .dsp import Psd, SpectralEstimate, analyze_window, compute_snr, detrend, \
    estimate_rr, lomb_scargle
from .flow import FlowField, FlowParams, dense_flow, vertical_velocities
from .fusion import (ArbitrationStrategy, FusionInput, RaEstimate,
                     baseline_fuse, s2_fuse, sqb_fuse, sqb_weights,
                     weighted_median)
from .pipeline import PipelineConfig, analyze_windows, extract_signals, \
    fuse_windows, run_session, train_detector
from .roi import (AffineTransform, ChestGeometry, LandmarkFrame, Roi, RoiTrack,
                  derive_rois, hold_and_retrigger, project_point)
from .signals import extract_rm, extract_ta, preprocess_fir, preprocess_nir
from .sim import (ApneaEvent, ApneaKind, ArtifactEvent, SessionSpec,
                  make_session, synth_frames, synth_signals)

__version__ = "0.1.0"
