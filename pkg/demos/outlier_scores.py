"""
Local outlier factor on a small cloud
=====================================

A dense blob plus a few stragglers. Scores near 1 mean "as dense as my
neighbours"; large scores flag points that sit in sparser space.
"""

import numpy as np

from calibre.lof import lof_scores

rng = np.random.default_rng(0)
blob = rng.normal(size=(60, 2))
stragglers = np.array([[6.0, 6.0], [-5.0, 4.0], [0.0, -7.0]])
X = np.vstack([blob, stragglers])

res = lof_scores(X, k=10)
order = np.argsort(res.scores)[::-1]
print("top five scores and their rows")
for i in order[:5]:
    print(f"  row {i:3d}  lof {res.scores[i]:.2f}")

# the three appended rows should lead the ranking
print("stragglers caught:", sorted(order[:3].tolist()) == [60, 61, 62])

# duplicated points have zero reach distance and infinite density; the pile
# scores exactly 1 and a finite-density point beside it scores inf
pile = np.zeros((5, 2))
print(lof_scores(np.vstack([pile, [[1.0, 1.0]]]), k=3).scores)
