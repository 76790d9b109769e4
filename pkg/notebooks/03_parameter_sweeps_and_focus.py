"""
Splitting parameter sweeps and focus sequences
===============================================

Where in mu the unstable and stable manifolds of the cycle points reach the
activating box, what the secondary cycles of a type-II cycle look like, and
which return times put a focus inside the box.
"""

# %%
import math

from blab import ref1, ref2, ref_df, ref_sf
from blab.cycle_analysis import (
    activation_intervals, focus_sequences, rational_theta_check, secondary_cycle_mu, sweep_mu, theta_prime_estimate,
)

p = ref1()
acts = activation_intervals(p, range(3, 8))
for iv in acts["u"] + acts["s"]:
    print(f"I^{iv.family}_{iv.index}: [{iv.lo:.6g}, {iv.hi:.6g}]")

# %%
rows = sweep_mu(p, (-0.05, 0.05), resolution=21)
for r in rows[::4]:
    print(f"mu = {r.mu:+.3f}  {r.label:38s} {r.theorem_side}")

# %%
# A rational modulus with |ab| equal to a power of |gamma|^(1/q) violates the first condition.
print(rational_theta_check(ref2()).rare1)

# %%
t2 = ref1(a=-1.0)
for s in secondary_cycle_mu(t2, [(20, 12), (39, 24)]):
    print(f"({s.k},{s.m}): {s.mu_a:.5e} vs {s.mu_b:.5e}, relative gap {s.relative_discrepancy:.2%}")
print(theta_prime_estimate(t2, 10))

# %%
sf = focus_sequences(ref_sf(), bound=10_000)
print("saddle-focus k:", sf.indices)
df = focus_sequences(ref_df(), bound=10_000, tol=0.05)
print(f"double-focus m: {len(df.indices)} indices, first {df.indices[:5]}")
print(focus_sequences(ref_sf(omega=2 * math.pi / 3), bound=50).advisory)
