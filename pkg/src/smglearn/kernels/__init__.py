"""Hot kernels, dispatched to numba or numpy per ``SMGLEARN_BACKEND``."""

from smglearn._backend import BACKEND, HAVE_NUMBA
from smglearn.kernels import numpy_impl

if HAVE_NUMBA:
    from smglearn.kernels import numba_impl as _impl
else:
    _impl = numpy_impl

mlp_forward = _impl.mlp_forward
mlp_loss_grad = _impl.mlp_loss_grad
adam_update = _impl.adam_update
box_blur = _impl.box_blur
mean_min_distance = _impl.mean_min_distance

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "adam_update",
    "box_blur",
    "mean_min_distance",
    "mlp_forward",
    "mlp_loss_grad",
    "numpy_impl",
]
