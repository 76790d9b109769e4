"""
Moduli, types and the first-return map
=======================================

Builds the reference saddle cycle, reads off its moduli and looks at how the
first-return map over the central direction depends on the pair (k, m).
"""

# %%
import numpy as np

from blab import ref1
from blab.cycle_analysis import compute_moduli, cycle_type, rational_theta_check
from blab.covering_engine import build_P_N
from blab.return_map import CrossMap, LiteralReturn, fixed_point, return_coeffs

p = ref1()
theta, alpha, kind = compute_moduli(p)
print(f"theta = {theta:.7f}, alpha = {alpha}, type {kind}")

# Flipping the sign of a changes the type; a negative multiplier forces III.
print(cycle_type(ref1(a=-1.0)), cycle_type(ref1(lam=-0.5, P2=[[0.2]])))

# %%
# theta is irrational, so only an approximant is reported.
rep = rational_theta_check(p, max_den=20)
print("best p/q with q <= 20:", rep.approximant, f"error {rep.approximant_error:.3e}")

# %%
# Balanced pairs: lambda^k gamma^m close to b u- / (a b x+) = 0.5.
pairs = build_P_N(p, N=10, k_max=100)
for pr in pairs[:6]:
    c = return_coeffs(p, pr.k, pr.m)
    print(f"({pr.k:3d},{pr.m:3d})  A = {c.A_km:.7f}  B = {c.B_km:+.7f}")

# %%
# The cross form and the literal composition agree to rounding at zero tails.
pts = np.random.default_rng(0).uniform(-0.01, 0.01, (200, 3))
gap = np.max(np.abs(CrossMap(p, 20, 12)(pts) - LiteralReturn(p, 20, 12)(pts)))
print(f"cross form vs literal at (20,12): {gap:.2e}")

fp = fixed_point(p, 20, 12)
print("fixed point", fp.point, "multiplier", fp.multiplier, "closed form", 3**12 / 2**20)
