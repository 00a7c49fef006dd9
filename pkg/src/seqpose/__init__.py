"""Sequential 3D hand pose estimation on a small numpy autodiff engine."""

__version__ = "0.1.0"
