"""Predict co-failure distance from static features, then rank the features by SHAP.

Run: python3 demos/learn_and_explain.py
"""

import numpy as np

from flakesift.explain import rank_features, shapley_sampled
from flakesift.learn import KINDS, cv_evaluate, fit_ensemble, kfold_split, to_arrays
from flakesift.strdist import FEATURE_NAMES
from flakesift.synth import synthetic_pair_examples

examples = synthetic_pair_examples(n_classes=6, per_class=8, sigma=0.05, seed=3)
tests = sorted({t for e in examples for t in e.tests})
folds = kfold_split(tests, 5, seed=42)
print(f"{len(examples)} pairs over {len(tests)} tests")
for kind in KINDS:
    rep = cv_evaluate(kind, "regression", examples, folds, seed=42)
    print(f"  {kind:18s} mean R^2 {rep.mean:.3f}")

X, y = to_arrays(examples, "regression")
model = fit_ensemble("extra_trees", "regression", X, y, seed=42)
rng = np.random.default_rng(0)
background = X[rng.choice(len(X), 20, replace=False)]
atts = [shapley_sampled(model, X[i], background, permutations=30, seed=i) for i in rng.choice(len(X), 40, replace=False)]
print(f"largest local-accuracy residual: {max(abs(a.residual) for a in atts):.2e}")
ranking = rank_features(atts, FEATURE_NAMES)
order = np.argsort(ranking.ranks)
print("top features by mean |SHAP|:")
for i in order[:5]:
    print(f"  {ranking.ranks[i]:2d}. {FEATURE_NAMES[i]:24s} {ranking.mean_abs[i]:.4f}")
