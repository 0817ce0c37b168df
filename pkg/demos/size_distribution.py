"""Average a particle intensity over a distribution of radii.

Real samples are polydisperse.  Instead of a single radius the intensity
is integrated against a gaussian radius distribution; the averaging node
behaves like any other functor and can be fitted directly.
"""

import os

import numpy as np

import scatterfit as sf
from scatterfit.quadrature import IntegrationSpec

out_dir = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out_dir, exist_ok=True)

q = sf.var("q")
R = sf.par("R", 7.5, units="nm")
width = sf.par("width", 1.8, units="nm")  # FWHM of the size distribution

env = {"q": q, "R": R}
I_mono = sf.parse(
    "(3*(sin(q*R) - q*R*cos(q*R))/(q*R)^3)^2", env)

# fwhm may itself be a parameter, so the spread can be a fit variable
I_poly = sf.average_parameter(I_mono, R, fwhm=width,
                              spec=IntegrationSpec(method="fixed",
                                                   order=24))

grid = np.linspace(0.05, 2.5, 600)
mono = np.asarray(I_mono(grid))
poly = np.asarray(I_poly(grid))

# Size averaging fills in the sharp minima of the single-radius curve.
print("monodisperse first minimum: %.3e" % mono.min())
print("polydisperse at same q:     %.3e" % poly[mono.argmin()])

import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6, 4))
ax.semilogy(grid, mono, label="single radius")
ax.semilogy(grid, poly, label="gaussian spread, FWHM 1.8 nm")
ax.set_xlabel("q (1/nm)")
ax.set_ylabel("form factor squared")
ax.legend()
fig.tight_layout()
path = os.path.join(out_dir, "size_distribution.png")
fig.savefig(path, dpi=120)
print("wrote", path)
