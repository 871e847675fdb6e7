"""vlrep: a desk-scale lab for video-language representation pretraining.

The package pre-trains a small convolutional image encoder on procedurally
generated video clips with templated language annotations, using a
time-contrastive objective, a video-language alignment score, and L1/L2
sparsity penalties, then evaluates the frozen representation with behavior
cloning on toy 2-D manipulation tasks.
"""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
DATASET_FORMAT_VERSION = 1

from .tensor import DimensionError, GradTape, ParamSet, Tensor, no_grad  # noqa: E402,F401
from .gradcheck import grad_check  # noqa: E402,F401
