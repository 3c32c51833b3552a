"""Region-scalable fitting level-set segmentation for tubular networks in 3D volumes."""
from .errors import NumericalBlowupError, ParameterError, RsfError, ShapeError, VolumeFormatError
from .phantom import PerturbSpec, PhantomSpec, generate_network, perturb, snr
from .rsf import RsfParams, evolve, evolve_step, extract_mask, init_state
from .seeding import BlobParams, SeedSet, detect_seeds, fast_sweep_distance, init_phi
from .tiling import TileLayout, merge_phi, plan_tiles, run_pipeline
from .validation import dice, evaluate, jaccard, otsu_slice_segment, otsu_threshold, sample_plan
from .volume import Kernel1D, Volume, gaussian_kernel, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "BlobParams", "Kernel1D", "NumericalBlowupError", "ParameterError", "PerturbSpec",
    "PhantomSpec", "RsfError", "RsfParams", "SeedSet", "ShapeError", "TileLayout", "Volume",
    "VolumeFormatError", "detect_seeds", "dice", "evaluate", "evolve", "evolve_step",
    "extract_mask", "fast_sweep_distance", "gaussian_kernel", "generate_network", "init_phi",
    "init_state", "jaccard", "merge_phi", "otsu_slice_segment", "otsu_threshold", "perturb",
    "plan_tiles", "read_volume", "run_pipeline", "sample_plan", "snr", "write_volume",
]
