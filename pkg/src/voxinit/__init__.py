"""voxinit: text-conditioned voxel-Gaussian initialization for 3D GS trainers.

A field of fixed-pose Gaussians on a uniform lattice is optimized through a
differentiable splat renderer; opacity and color come from a small attention
network conditioned on the prompt, and thresholding opacity at the end yields
an initialization point cloud for downstream Gaussian-splatting training.
"""

from .camera import CameraPose, OrbitConfig, orbit_pose, sample_camera
from .config import TrainConfig
from .encoding import DeskTextProvider, TextEmbedding, positional_encode, positional_features, tokenize
from .errors import (
    CheckpointError,
    DivergenceError,
    InvalidStateError,
    ProtocolError,
    TransportError,
)
from .estimator import GaussianFieldInitializer
from .field import (
    FIXED_ROTATION,
    FIXED_SCALE,
    GridIndexMap,
    InitPointCloud,
    VoxelGaussianField,
    build_field,
    export_ply,
    filter_occupied,
    partition_grid,
    read_ply,
)
from .guidance import GuidanceResidual, SyntheticTargetProvider, TargetSet, sds_apply, synthetic_residual
from .network import (
    NetworkParams,
    gip_forward,
    gtf_forward,
    init_network_params,
    network_backward,
    network_forward,
)
from .renderer import RenderedImage, SplatCache, build_splat_cache, render_backward, splat_render
from .training import TrainResult, train_init

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "CheckpointError",
    "DeskTextProvider",
    "DivergenceError",
    "FIXED_ROTATION",
    "FIXED_SCALE",
    "GaussianFieldInitializer",
    "GridIndexMap",
    "GuidanceResidual",
    "InitPointCloud",
    "InvalidStateError",
    "NetworkParams",
    "OrbitConfig",
    "ProtocolError",
    "RenderedImage",
    "SplatCache",
    "SyntheticTargetProvider",
    "TargetSet",
    "TextEmbedding",
    "TrainConfig",
    "TrainResult",
    "TransportError",
    "VoxelGaussianField",
    "build_field",
    "build_splat_cache",
    "export_ply",
    "filter_occupied",
    "gip_forward",
    "gtf_forward",
    "init_network_params",
    "network_backward",
    "network_forward",
    "orbit_pose",
    "partition_grid",
    "positional_encode",
    "positional_features",
    "read_ply",
    "render_backward",
    "sample_camera",
    "sds_apply",
    "splat_render",
    "synthetic_residual",
    "tokenize",
    "train_init",
]
