"""Box dimension of generalized Koch arcs and the four classifier archetypes.

Run from the repository root:  python3 demos/koch_and_classifier.py [outdir]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from wandering_compacta import fractal as fr

out = sys.argv[1] if len(sys.argv) > 1 else "."

fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
for ax, s in zip(axes, (2.5, 3.0, 3.5)):
    c = fr.koch_curve(fr.CurveSpec.uniform(s, 6))
    est = fr.box_dimension(c.vertices).estimate
    ax.plot(c.vertices.real, c.vertices.imag, lw=0.4)
    ax.set_aspect("equal")
    ax.set_title(f"s={s}: box {est:.3f}, log4/log s {np.log(4) / np.log(s):.3f}")
fig.tight_layout()
fig.savefig(f"{out}/koch_uniform.png", dpi=120)

c = fr.koch_curve(fr.CurveSpec(1.1, 1.6, 8))
t = np.linspace(0, 0.8, 5)
est = [fr.box_dimension(c.subarc(a, a + 0.2)).estimate for a in t]
print("sub-arc box dimension", np.round(est, 3))
print("formula at midpoints  ", np.round(fr.local_dimension(c.spec, t + 0.1), 3))

U = fr.snowflake_domain(3, depth=4, resolution=512)
print("snowflake domain: holes", len(U.bounded_complement_components()))

fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
for ax, name in zip(axes, fr.ARCHETYPES):
    V = fr.archetype(name, 256)
    ax.imshow(V.mask, origin="lower", cmap="gray_r")
    ax.set_title(f"{name}\n{fr.classify_domain(V).as_tuple()}", fontsize=8)
    ax.axis("off")
fig.tight_layout()
fig.savefig(f"{out}/classifier.png", dpi=120)
