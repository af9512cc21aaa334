"""Zero-shot 6DoF object pose estimation from rendered templates.

Pipeline: template matching on masked feature maps, joint PCA co-projection
into a shared hyperfeature space, clustered semantic correspondences with an
epipolar consistency filter, sub-pixel refinement, geometric lifting through
NOCS maps, and RANSAC-EPnP pose retrieval. Ships with BOP-style VSD / MSSD /
MSPD / AR evaluation and a software rasterizer that enables a fully
synthetic, self-verifying end-to-end test.
"""

from .config import PipelineConfig, load_config
from .geometry import CameraIntrinsics, CropTransform, Pose, SymmetrySet
from .mesh import TriangleMesh, parse_ply
from .raster import RenderOutput, depth_to_distance, rasterize
from .tensorio import FeatureMap, read_feature_map, write_feature_map

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CropTransform",
    "FeatureMap",
    "PipelineConfig",
    "Pose",
    "RenderOutput",
    "SymmetrySet",
    "TriangleMesh",
    "depth_to_distance",
    "load_config",
    "parse_ply",
    "rasterize",
    "read_feature_map",
    "write_feature_map",
    "__version__",
]
