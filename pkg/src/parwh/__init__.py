"""parwh: identification of parallel Wiener-Hammerstein models from input-output data.

Pipeline stages: robust best-linear-approximation (BLA) estimation over several
operating conditions, common-denominator rational parametrization, SVD branch
decomposition with a whitened rank test, exhaustive pole/zero partition scan
with a linear-least-squares nonlinearity fit, and a final Levenberg-Marquardt
refinement of all parameters.
"""

from parwh.lti import RationalTF, RootSet

__version__ = "0.1.0"
