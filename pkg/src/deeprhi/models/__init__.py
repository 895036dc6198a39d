from .dataset import Dataset, denormalize, generate_dataset, held_out_dataset, normalize
from .training import TrainConfig, TrainingDiverged, ensure_model, train_decoder, train_vae
from .visual import VisualEval, VisualModel, jacobian_image, predict_visual, visual_adjoint

__all__ = [
    "Dataset",
    "TrainConfig",
    "TrainingDiverged",
    "VisualEval",
    "VisualModel",
    "denormalize",
    "ensure_model",
    "generate_dataset",
    "held_out_dataset",
    "jacobian_image",
    "normalize",
    "predict_visual",
    "train_decoder",
    "train_vae",
    "visual_adjoint",
]
