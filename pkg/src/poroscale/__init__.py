"""Stochastic poroelasticity upscaling with a learned surrogate for cell problems.

The package generates random property fields on a fine grid, solves local
cell problems to produce effective permeability and stiffness tensors per
coarse cell, trains a small convolutional network to predict those tensors
directly from property patches, and compares coarse solves driven by either
tensor source against the fine-scale solution.
"""

__version__ = "0.1.0"
