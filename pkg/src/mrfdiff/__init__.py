"""Conditional diffusion restoration of MR fingerprinting subspace images.

Modules: tensorio (tensor files), epg (FISP simulation and dictionaries),
subspace (SVD compression), phantom, acquire (multicoil undersampled operator),
diffusion (schedules, losses, reverse steps), neural (U-Net denoiser, ADAM,
EMA, checkpoints), train, sample, match, baselines (SVDMRF, LRTV), metrics,
config, pipeline and cli (``python -m mrfdiff``).
"""

from .config import ConfigError, RunConfig, from_dict, load_config
from .epg import build_dictionary, default_sequence, epg_fisp, truncate_sequence
from .match import dict_match
from .pipeline import run_ablation, run_pipeline
from .subspace import compress, compute_basis, decompress

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "RunConfig", "from_dict", "load_config",
    "build_dictionary", "default_sequence", "epg_fisp", "truncate_sequence",
    "dict_match", "run_ablation", "run_pipeline",
    "compress", "compute_basis", "decompress",
]
