"""Composable scattering-model construction and fitting."""

from .expr import (
    Expression, Parameter, Variable, Constant, ParseError,
    par, var, constant, parse, to_text, evaluate, scalar,
    sin, cos, tan, arcsin, arccos, arctan, sinh, cosh, tanh,
    exp, log, log10, sqrt, erf, absolute, conj, re, im, pow,
)
from .quadrature import (
    IntegrationSpec, ConvergenceWarning, gauss_legendre,
    integrate_variable, average_parameter, convolve_variable,
)
from .dataset import DataSet, DataFormatError, data, load_text, save_text
from .models import Model, MultiModel, NonFiniteModelError, model, multimodel
from .fit import (
    LMOptions, DEOptions, FitResult, FitError, FitController,
    fit_lm, fit_de, estimate_errors, save_snapshot, load_snapshot,
)
from .quadrature import FWHM_TO_SIGMA
from .reflectivity import (
    Material, Layer, Stack, Multilayer,
    amorphous, air, layer, substrate, stack, multilayer,
    specrefl, pnrspec, mix_channels, sld_profile, refractive_terms,
)
from .potentials import (
    Box, Polyhedron, Potential, FormFactor,
    box, polyhedron, potential, formfactor, lattice, sas,
)
from .modelfile import ModelFileError, Workspace, parse_grid

__version__ = "0.1.0"
