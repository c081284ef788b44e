"""Train the perturbation controller and compare it with LQR and the nominal gain.

Runs synthesis, the full-length training run and 40 paired evaluation runs
(a couple of minutes). Usage: python3 demos/train_and_evaluate.py
"""

import numpy as np

from lipstab import (SynthesisConfig, TrainConfig, example_params, example_plant, example_polytope, linearize,
                     lipschitz_upper_bound, lqr_gain, monte_carlo_eval, synthesize, train)
from lipstab.sim import Controller, stats_csv

plant, params, polytope = example_plant(), example_params(), example_polytope()
res = synthesize(plant, params, polytope, SynthesisConfig(w=1.1, n_steps=20))
trained = train(plant, res.K, res.L, res.P, res.sigma, params, TrainConfig())
print(f"actor Lipschitz bound {lipschitz_upper_bound(trained.actor):.4f} (cap {res.L})")

nom = linearize(plant)
K_lqr, _ = lqr_gain(nom.A, nom.B, np.eye(2), np.eye(2))
controllers = {"lqr": Controller(K_lqr), "nominal": Controller(res.K), "trained": Controller(res.K, trained.actor)}
stats = monte_carlo_eval(plant, controllers, 40, res.P, res.sigma, params, 200, 0.1, 2023)
print(stats_csv(stats))
