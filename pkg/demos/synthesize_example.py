"""Synthesize a nominal gain, Lipschitz budget and safe ellipsoid for the example plant.

Usage: python3 demos/synthesize_example.py
"""

import logging

import numpy as np

from lipstab import SynthesisConfig, example_params, example_plant, example_polytope, synthesize

logging.basicConfig(level=logging.INFO, format="%(message)s")
np.set_printoptions(precision=4, suppress=True)

result = synthesize(example_plant(), example_params(), example_polytope(), SynthesisConfig(w=1.1, n_steps=20))
print("K0 =\n", result.K0)
print("K* =\n", result.K)
print("P* =\n", result.P)
print(f"L* = {result.L}  sigma* = {result.sigma:.4f}  feasible iterations = {result.iterations}")
print(result.log_csv())
