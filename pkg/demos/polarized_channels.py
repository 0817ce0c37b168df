"""Polarized specular reflectivity of a magnetic film.

A magnetic scattering length density splits the reflectivity into spin
channels.  Polarizer and analyzer efficiencies below one mix the ideal
channels into what an instrument actually measures.
"""

import os

import numpy as np

import scatterfit as sf

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

q = sf.var("q")

si = sf.amorphous("Si", 2.074e-4)
fe = sf.amorphous("Fe", 8.02e-4)

sample = sf.multilayer("magfilm", sf.air(), sf.substrate("sub", si, 0.3))
sample.add(sf.layer("Fe", fe, 30.0, 0.5, msld=5.0e-4))

# Ideal channels: +1 selects spin-up, -1 spin-down, for incoming beam
# and analyzer separately.
R_up = sf.pnrspec("R++", q, sample, 1.0, 1.0)
R_down = sf.pnrspec("R--", q, sample, -1.0, -1.0)

# A real polarizer with 95% efficiency leaks the other channel in.
eff = sf.par("eff", 0.95)
R_meas = sf.pnrspec("Rmeas", q, sample, eff, eff)

grid = np.linspace(0.1, 1.8, 1200)
up = np.asarray(R_up(grid))
down = np.asarray(R_down(grid))
meas = np.asarray(R_meas(grid))

split = np.max(np.abs(up - down) / np.maximum(up, down))
print("largest relative spin splitting: %.2f" % split)

# With no spin-flip scattering the measurement is a fixed blend of the
# two ideal channels; the leaked weight is tiny but visible where the
# channels differ most.
w_keep = ((1 + 0.95) / 2) ** 2
w_leak = ((1 - 0.95) / 2) ** 2
blend = w_keep * up + w_leak * down
print("measured equals %.4f*up + %.6f*down: %s"
      % (w_keep, w_leak, bool(np.allclose(meas, blend, rtol=1e-12))))

import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6.5, 4))
ax.semilogy(grid, up, label="spin up")
ax.semilogy(grid, down, label="spin down")
ax.semilogy(grid, meas, "--", label="95% efficiency")
ax.set_xlabel("q (1/nm)")
ax.set_ylabel("reflectivity")
ax.legend()
fig.tight_layout()
path = os.path.join(out_dir, "polarized.png")
fig.savefig(path, dpi=120)
print("wrote", path)
