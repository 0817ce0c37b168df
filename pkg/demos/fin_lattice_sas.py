"""Small-angle scattering map of a lattice of oxide-coated fin pairs.

Each structure unit is two rectangular fins: a hafnium-oxide shell with
a silicon core, built by adding and subtracting boxes.  A periodic
one-dimensional lattice factor multiplies the squared form factor.
"""

import os
import time

import numpy as np

import scatterfit as sf

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

qx, qy, qz = sf.var("qx", 0), sf.var("qy", 1), sf.var("qz", 2)

rho_oxide = 63.976e-6
rho_core = 20.071e-6
D = 75.0  # center-to-center fin separation, nm

fins = sf.potential("fin pair")
for x0 in (-D / 2.0, D / 2.0):
    # shell minus its interior, then the interior refilled with silicon
    fins.add(sf.box("shell", rho_oxide, (25.0, 500.0, 100.0),
                    (x0, 0.0, 50.0)))
    fins.subtract(sf.box("hole", rho_oxide, (20.0, 500.0, 97.5),
                         (x0, 0.0, 48.75)))
    fins.add(sf.box("core", rho_core, (20.0, 500.0, 97.5),
                    (x0, 0.0, 48.75)))

form = sf.formfactor("F", fins, qx, qy, qz)
lattice = sf.lattice("Lx", qx, 200.0, 5)   # 5 units, 200 nm period
I = sf.sas("I", form, [lattice])

n = 400
gx = np.linspace(-0.1, 0.1, n)
gy = np.linspace(-0.1, 0.1, n)
mx, my = np.meshgrid(gx, gy, indexing="ij")

start = time.perf_counter()
values = np.asarray(I(mx.ravel(), my.ravel(),
                      np.zeros(mx.size))).reshape(n, n)
print("%dx%d map in %.2f s" % (n, n, time.perf_counter() - start))

# lattice peaks appear every 2*pi/200 along qx
profile = values[:, n // 2]
peaks = gx[1:-1][(profile[1:-1] >= profile[:-2])
                 & (profile[1:-1] >= profile[2:])]
print("maxima along qx:", np.round(peaks[:7], 4))

from scatterfit.plotting import plot_map

path = os.path.join(out_dir, "fin_lattice.png")
plot_map(gx, gy, values, path, xlabel="qx (1/nm)", ylabel="qy (1/nm)",
         title="fin pair lattice")
print("wrote", path)
