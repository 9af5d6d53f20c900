"""Quality-aware unpaired image translation toolkit."""

from cycleiq.autodiff import Tape, Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "grad_check", "__version__"]
