"""
Writing and checking feature constraints
========================================

Constraints are plain text over feature names. The same set answers three
questions: does a row satisfy it, how far off is it, and what is the
closest row that makes every equality hold.
"""

import numpy as np

from tabattack import FeatureSpec, check, parse_constraints, penalty, repair

specs = [
    FeatureSpec("low", "continuous", True, 0.0, 10.0),
    FeatureSpec("high", "continuous", True, 0.0, 20.0),
    FeatureSpec("total", "continuous", True, 0.0, 30.0),
    FeatureSpec("kind", "categorical", False, 0, 2, categories=(0, 1, 2)),
]
omega = parse_constraints("low <= high\ntotal = low + high\nkind in {0, 1, 2}", specs)
print(omega.to_text())

# %%
# A consistent row, and one where total has drifted
rows = np.array([
    [2.0, 5.0, 7.0, 1.0],
    [2.0, 5.0, 9.0, 1.0],
    [6.0, 5.0, 11.0, 1.0],
])
print("satisfied:", check(omega, rows))
print("penalty:  ", penalty(omega, rows))

# %%
# Repair rewrites total from its definition. It cannot fix low > high,
# which is an inequality, so the last row still fails the check.
fixed = repair(omega, rows)
print(fixed)
print("satisfied after repair:", check(omega, fixed))

# %%
# orig() reads the clean row, which lets a constraint bound how far a
# feature may move during an attack
drift = parse_constraints("total <= orig(total) + 1", specs)
nudged = rows[0] + [0.0, 0.5, 0.5, 0.0]
print("nudged:", check(drift, nudged, rows[0]), " drifted:", check(drift, rows[1], rows[0]))
