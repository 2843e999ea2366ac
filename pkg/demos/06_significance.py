"""
Paired t-test on weak users
===========================

The t distribution tail comes from a continued-fraction evaluation of the
regularized incomplete beta function. Here it is applied to per-user AUC of
the recommender against a noisy re-ranker.
"""

import numpy as np

from weakrec.metrics import paired_ttest, t_sf_two_sided

t, p, df = paired_ttest([0.2, 0.4, 0.6], [0.3, 0.5, 0.9])
print(f"hand example: t = {t:.4f}, df = {df}, p = {p:.4f}")

for t in (1.0, 2.0, 3.0):
    print(f"P(|T| > {t}) with 5 df: {t_sf_two_sided(t, 5):.6f}")

rng = np.random.default_rng(0)
rs = rng.beta(2, 5, 300)
hybrid = np.clip(rs + rng.normal(0.15, 0.2, 300), 0, 1)
t, p, df = paired_ttest(rs, hybrid)
print(f"RS minus hybrid over {df + 1} users: t = {t:.2f}, p = {p:.3g}")
