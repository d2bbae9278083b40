"""
Calibrating columns and embedding a support set
===============================================

A walk through the two blocks that turn a raw support set into a task
descriptor: per-column piecewise linear calibration, then the
distribution embedding computed over covariate pairs.
"""

import numpy as np

from den.classifier import IndexSetPolicy, enumerate_index_sets
from den.embedding import embed_conditional
from den.nn import init_params
from den.plf import PLF, fit_bank, isotonic_fit, plf_forward

# A PLF is fixed keypoints plus trainable outputs; between keypoints it
# interpolates, outside them it clamps.
p = PLF(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 1.0, 4.0, 9.0]))
print("plf at -1, 0.5, 1.5, 7:", plf_forward(p, np.array([-1.0, 0.5, 1.5, 7.0])))

# Monotone calibrators are kept monotone by projecting the outputs with
# pool-adjacent-violators after every update.
print("isotonic projection of [3, 1, 2]:", isotonic_fit(np.array([3.0, 1.0, 2.0])))

# Fitting a bank to a support set places K uniform keypoints over each
# column's range and starts every PLF as a ramp from 0 to 1, so columns
# on wildly different scales land on a common one.
rng = np.random.default_rng(0)
X = np.column_stack([rng.normal(50, 10, 40), rng.exponential(0.01, 40), rng.uniform(-3, 3, 40)])
y = (X[:, 0] + 1000 * X[:, 1] > 60).astype(int)
bank = fit_bank(X, K=10)
Z = np.column_stack([plf_forward(q, X[:, j]) for j, q in enumerate(bank.plfs)])
print("raw column ranges:       ", np.ptp(X, axis=0).round(3))
print("calibrated column ranges:", np.ptp(Z, axis=0).round(3))

# Index sets are ordered r-tuples of columns.  For pairs over 3 columns
# there are 9 of them; the cap (d**2 by default) only bites for r > 2.
sets = enumerate_index_sets(3, IndexSetPolicy(r=2))
print("pairs:", sets.tolist())

# The binary embedding of each tuple is [mean h over class 0, mean h over
# class 1, fraction of positives].  It does not depend on row order.
h = init_params([2, 8, 4], seed=1)
s = embed_conditional(h, Z, y, sets)
perm = rng.permutation(len(y))
s_perm = embed_conditional(h, Z[perm], y[perm], sets)
print("embedding width:", s.width, " rows:", s.vectors.shape[0])
print("row permutation changes the embedding by", np.abs(s.vectors - s_perm.vectors).max())
