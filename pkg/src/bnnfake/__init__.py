"""Binary-network deepfake detection on RGB plus frequency and texture planes.

Modules: ``tensor`` (bit-packed operands), ``binops`` (XNOR/POPCOUNT
convolution), ``fft`` and ``features`` (augmentation planes), ``model``,
``train``, ``metrics``, ``data`` and ``cli``.
"""

from .errors import BnnError, DataError, ModelFormatError, NumericError, ShapeError
from .features import build_stack, stack_channels
from .model import ModelSpec, ModelState, default_spec, forward, init_state, load_model, save_model
from .tensor import BitTensor, pack, sign_quantize, unpack, xnor_popcount_dot
from .train import TrainConfig, train_loop

__version__ = "0.1.0"
