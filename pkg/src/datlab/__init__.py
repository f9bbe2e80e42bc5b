"""datlab: a desk-scale lab for length generalization in recurrent/attention
hybrid sequence models, trained with or without delayed attention."""

__version__ = "0.1.0"

from .rng import Rng, derive_seed
from .tensor import Tensor, no_grad
from .models import ModelSpec, build, predict_answers
from .training import TrainPlan, Phase, plan_dat, plan_end_to_end, train
from .evaluation import evaluate, render_report, compare_runs

__all__ = [
    "Rng", "derive_seed", "Tensor", "no_grad", "ModelSpec", "build",
    "predict_answers", "TrainPlan", "Phase", "plan_dat", "plan_end_to_end",
    "train", "evaluate", "render_report", "compare_runs", "__version__",
]
