"""splatkit: sparse-view 3D Gaussian splatting training toolkit."""

from .scene import (Camera, Gaussian3D, GaussianCloud, Scene,
                    covariance_from_params, validate_scene)
from .rasterize import (ParamGrads, Projected2D, RenderOutput,
                        project, render, render_backward)
from .losses import (LossBreakdown, LossWeights, SideTerm, d_ssim,
                     global_depth_loss, l1_color, local_depth_loss,
                     local_normalize, pearson, semantic_loss, total_loss)
from .sideviews import SideViewSpec, sample_side_pose, slerp
from .priors import (DepthMap, FeatureEmbedding, FilePriorSource,
                     OraclePriorSource, PriorSource, ServicePriorSource,
                     toy_features)
from .train import TrainConfig, TrainState, densify_prune, train, train_step
from .evaluate import EvalReport, evaluate_cloud, make_llff_split, psnr, ssim, sweep
from .colmap import load_colmap_scene
from .synth import synth_scene
from .io import (load_cloud, load_image, read_femb, read_pfm, save_cloud,
                 save_image, write_femb, write_pfm)

__version__ = "0.1.0"
