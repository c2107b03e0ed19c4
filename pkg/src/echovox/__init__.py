"""echovox: oral-cavity image sequences to audible speech.

Two convolutional networks map 128x128 grayscale frame windows to
64-band Mel spectra and refine whole spectrogram segments; Griffin-Lim
phase retrieval turns the result into a waveform.  Everything runs on a
small from-scratch autodiff engine over numpy.
"""

from .rng import RngStream
from .tensor import Tensor, RunningStats, ShapeError, no_grad
from .optim import AdamState, adam_step
from .gradcheck import grad_check, operator_suite

__version__ = "0.1.0"
