"""Instance-optimization deformable registration of 3-D volumes."""
from .config import parse_config, serialize_config
from .data import (CaseRecord, DatasetIndex, SamplePair, SamplerConfig, SplitMix64, epoch_pairs,
                   sampler_report, scan_layout, split)
from .errors import DefregError, UsageError
from .estimator import DeformableRegistration
from .grid import VectorField, Volume, warp, warp_adjoint
from .io import read_field, read_landmarks, read_volume, write_field, write_volume
from .losses import LossReport, ObjectiveWeights, SimilarityKind, total_objective
from .optim import RegistrationResult, evaluate, register
from .synth import SynthSpec, generate
from .transform import SVF, Affine, BSplineFFD, DenseDDF, compose, exp_svf, jacobian_det

__version__ = "0.1.0"
