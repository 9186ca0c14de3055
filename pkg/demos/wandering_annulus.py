"""Build f for a small annulus, check its orbits and draw the orbit classes.

Run from the repository root:  python3 demos/wandering_annulus.py [outdir]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from wandering_compacta.compacta import generate
from wandering_compacta.construction import run
from wandering_compacta.dynamics import render, verify_boundary_capture, verify_escape
from wandering_compacta.rational import iterate

out = sys.argv[1] if len(sys.argv) > 1 else "."
N = 2

K = generate("annulus", 256)
f, stages, final = run(K, N, log=print)

esc = verify_escape(f, final.K, N)
cap = verify_boundary_capture(f, stages)
print("escape margin", esc["margin"], "capture margins", [p["margin"] for p in cap["per_stage"]])
print("eps", ["%.3g" % e for e in final.eps], "poles", f.n_poles)

z = final.K.points()[::50]
orb = iterate(f, z, N)
print("max |f^j(z) - 3j| on K:", np.abs(orb - 3.0 * np.arange(N + 1)[:, None]).max())

rgb, orbits, legend = render(f, (-4.5, 7.5, -2, 2), N, width=900)
fig, ax = plt.subplots(figsize=(9, 3.2))
ax.imshow(rgb, extent=(-4.5, 7.5, -2, 2))
for c in range(N + 1):
    ax.add_patch(plt.Circle((3 * c, 0), 1, fill=False, ls="--", lw=0.6))
ax.add_patch(plt.Circle((-3, 0), 1, fill=False, ls="--", lw=0.6))
ax.set_title("blue: follows D_0, D_1, ...   orange: captured by D(-3,1)   black: pre-pole")
fig.tight_layout()
fig.savefig(f"{out}/wandering_annulus.png", dpi=120)
print(legend["classes"]["ESCAPING"]["pixels"], "escaping pixels")
