"""Segmentation-guided uncertainty bounds for undersampled MRI reconstruction.

The data prior is an analytic Gaussian mixture over synthetic phantoms, so
every score, Jacobian and gradient in the pipeline has a closed form.
"""

from .cg import CgConfig, NumericalFailure, cg_solve
from .guidance import BoundsResult, GuidanceSpec, bounded_reconstruct, guidance_gradient
from .operators import SamplingMask, Measurement, forward, adjoint, make_mask, normal_operator
from .phantom import GaussianMixturePrior, PhantomSpec, build_prior, default_phantom_spec, generate_phantom
from .rr_baseline import repeated_reconstruction
from .sampler import DiffusionSchedule, make_schedule, reconstruct
from .segmenter import SegmenterParams, params_from_spec, segment

__version__ = "0.1.0"
