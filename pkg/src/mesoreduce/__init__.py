"""Coarse-graining of particle systems into mesoparticle master equations,
with quantum, classical and Wigner-function engines."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .algebra import (  # noqa: E402
    ClusterPartition,
    LiouvillianSpec,
    MomentModel,
    ParticleSystem,
    find_invariance_depth,
    initial_spec,
    reduce_chain,
    reduce_once,
    signature,
)
from .errors import ConfigError, InvariantBreach, MesoError, NumericalInstability  # noqa: E402
from .polynomial import Polynomial, parse_polynomial  # noqa: E402
