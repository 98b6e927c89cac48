"""CycleGAN translation of two-channel light-sheet fluorescence slices into virtual H&E."""

__version__ = "0.1.0"
