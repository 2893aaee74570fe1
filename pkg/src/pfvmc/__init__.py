"""Variational Monte Carlo engine with a Pfaffian wave function.

A single nucleus-graph network emits the per-molecule wave-function
parameters, so one set of trained weights covers many molecules at once.
All numerics run in float64; the flag below must be set before any JAX
array is created, so importing this package first is mandatory.
"""

from jax import config as _jax_config

_jax_config.update("jax_enable_x64", True)

__version__ = "0.1.0"
