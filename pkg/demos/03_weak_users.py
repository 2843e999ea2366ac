"""
Finding weak users
==================

A user is weak when the recommender ranks their held-out item no better than
chance (AUC <= 0.5) and their history is sparser than average. The funnel
shows how each condition narrows the population.
"""

import numpy as np

from weakrec import corpus, fixture, gate, recsys, report
from weakrec.metrics import profile_users

split = corpus.loo_split(corpus.build_dataset(corpus.kcore_filter(fixture.load_ratings(), 5)))
rec = recsys.fit_itemknn(split, k=100, shrink=0.5)
profiles = profile_users(rec, split)

t_p, t_s = gate.resolve_thresholds(gate.GateConfig(), profiles)
weak, strong = gate.partition(profiles, gate.GateConfig())
sparse = sum(p.sparsity > t_s for p in profiles)
print(f"t_p = {t_p}, t_s = mean sparsity = {t_s:.4f}")
print(report.emit_weak_funnel(len(profiles), sparse, len(weak)))

auc = np.array([p.auc for p in profiles])
sp = np.array([p.sparsity for p in profiles])
print(f"correlation between sparsity and AUC: {np.corrcoef(sp, auc)[0, 1]:+.3f}")
print("first rows of the AUC-vs-sparsity scatter data:")
print("".join(report.emit_scatter(profiles, split.user_ids).splitlines(keepends=True)[:4]))
