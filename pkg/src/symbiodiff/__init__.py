"""Subject-driven region customisation with a diffusion denoiser that recycles
its own hidden states as the subject signature extractor."""
from .denoiser import Denoiser, DenoiserConfig, SemanticEncoder
from .diffusion_core import DiffusionSchedule, make_schedule
from .system import SYSTEMS, DiffusionSystem

__version__ = "0.1.0"

__all__ = ["Denoiser", "DenoiserConfig", "SemanticEncoder", "DiffusionSchedule", "make_schedule",
           "SYSTEMS", "DiffusionSystem", "__version__"]
