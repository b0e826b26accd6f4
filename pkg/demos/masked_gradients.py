"""
When gradients lie
==================

A classifier whose scores are piecewise constant gives gradient attacks
nothing to follow. The evolutionary search only needs the scores, so it
still finds adversarial rows.
"""

from tabattack import CapgdConfig, MaskedClassifier, MoevaConfig, capgd, moeva
from tabattack.benchmark import build_benchmark

b = build_benchmark(seed=0)
masked = MaskedClassifier(b.model, step=0.25, critical_bias=12.0, critical_class=1)

# %%
# Same predictions on clean rows, but a zero input gradient
_, grad, _ = masked.evaluate(b.X, b.Y)
keep = masked.predict(b.X) == b.Y
print(f"clean accuracy {keep.mean():.3f}, largest gradient entry {abs(grad).max()}")

# %%
X, Y = b.X[keep], b.Y[keep]
g = capgd(masked, X, Y, b.omega, CapgdConfig(seed=0), b.budget)
m = moeva(masked, X, Y, b.omega, MoevaConfig(seed=0), b.budget)
print(f"CAPGD success rate {g.success_rate:.3f}")
print(f"MOEVA success rate {m.success_rate:.3f}")
