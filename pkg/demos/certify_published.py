"""Check the published gain and Lyapunov matrix for the example plant at L = 1.1.

Usage: python3 demos/certify_published.py
"""

import numpy as np

from lipstab import (StabilityCertificate, certify_multipliers, compute_sector, example_params, example_plant,
                     example_polytope, max_level, verify_certificate)

K = np.array([[-2.9714, -0.1204], [1.5924, -2.1744]])
P = np.array([[3.8426, -0.2612], [-0.2612, 1.5241]])
L, sigma = 1.1, 0.3272

plant, params, polytope = example_plant(), example_params(), example_polytope()
sector = compute_sector(plant, K, L, polytope, params)
multipliers = certify_multipliers(plant, K, P, L, sector)
if multipliers is None:
    raise SystemExit("no multipliers found: the stability LMI is infeasible")
print(f"largest safe level for this P: {max_level(P, polytope):.5f} (published sigma {sigma})")
cert = StabilityCertificate(K, L, P, multipliers, sigma, polytope, 1.0)
verdict = verify_certificate(plant, cert, sector)
print(f"certificate valid: {verdict.valid}  max LMI eigenvalue: {verdict.lmi_max_eig:.3e}  {verdict.reason}")
