"""Multigenerational status-transmission models: simulation, closed forms, estimators."""

__version__ = "0.1.0"

from .models import (  # noqa: E402
    AssortativeParams,
    GrandparentAR2Params,
    LatentFactorParams,
    ModelError,
    MultiplicityParams,
    PovertyTrapParams,
    spec_from_dict,
    spec_to_dict,
    validate,
)
from .pedigree import Pedigree, Person, SimTopology  # noqa: E402
from .simulate import simulate  # noqa: E402

__all__ = [
    "AssortativeParams",
    "GrandparentAR2Params",
    "LatentFactorParams",
    "ModelError",
    "MultiplicityParams",
    "Pedigree",
    "Person",
    "PovertyTrapParams",
    "SimTopology",
    "simulate",
    "spec_from_dict",
    "spec_to_dict",
    "validate",
]
