from .gradcam import GradCAM, cam_from_activations, grad_cam, grad_cam_batch, upsample_nearest
from .heatmap import Heatmap, heatmap_bytes, read_heatmap, write_heatmap
from .ig import IGResult, IntegratedGradients, integrated_gradients
from .lime import LimeExplainer, LimeExplanation, grid_segments, lime_explain, weighted_ridge

__all__ = [
    "GradCAM", "Heatmap", "IGResult", "IntegratedGradients", "LimeExplainer", "LimeExplanation",
    "cam_from_activations", "grad_cam", "grad_cam_batch", "grid_segments", "heatmap_bytes",
    "integrated_gradients", "lime_explain", "read_heatmap", "upsample_nearest", "weighted_ridge",
    "write_heatmap",
]
