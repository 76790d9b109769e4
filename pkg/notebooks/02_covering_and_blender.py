"""
From a covering family to a blender certificate
================================================

A handful of balanced returns whose central images overlap is enough to
refine any proper disc forever. Here the family is built, checked exactly,
and used to certify 100 random discs.
"""

# %%
import numpy as np

from blab import ref1
from blab.blender_verifier import perturb_transitions, verify_blender
from blab.cone_checker import check_all_cones
from blab.covering_engine import build_covering_set, verify_covering

p = ref1()
cover = build_covering_set(p, k_max=150)
rep = verify_covering(cover)
print(f"{cover.n} pairs:", [pr.pair for pr in cover.pairs])
print("covered:", rep.covered, " smallest overlap:", float(rep.min_overlap), " needed:", float(rep.required_overlap))

# %%
# Removing intervals from the middle eventually opens a gap, and the checker says where.
thin = cover
while verify_covering(thin).covered:
    thin = thin.without(thin.n // 2)
print(verify_covering(thin).summary())

# %%
cones = check_all_cones(p, 20, 12, K=0.1, samples=2000)
for name, r in cones.items():
    print(f"{name}: pass {r.pass_fraction:.3f}  margin {r.worst_margin:.4f}")

# %%
cert = verify_blender(p, cover, trials=100, depth=30, seed=0)
print(f"{cert.pass_count}/100 discs certified in {cert.runtime_s:.1f} s")
D = np.array(cert.records[0].log10_diameters)
print("log10 diameter bound, first steps:", np.round(D[:5], 1))

# %%
# The same family survives small noise on every transition coefficient.
noisy = verify_blender(perturb_transitions(p, 1e-3, seed=0), cover, trials=100, depth=30, seed=0)
print(f"after 1e-3 noise: {noisy.pass_count}/100")

# %%
# With alpha > 1 the reversed return gives the cu version.
cu = verify_blender(ref1(u_minus=[2.5]), trials=20, depth=30)
print(cu.orientation, cu.pass_count, "/ 20")
