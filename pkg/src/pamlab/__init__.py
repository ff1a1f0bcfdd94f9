"""pamlab: parabolic Anderson model laboratory for heavy-tailed potentials."""
from .field import ExplicitField, FieldSpec, Family, HashField, LatticeSite

__version__ = "0.1.0"
__all__ = ["ExplicitField", "FieldSpec", "Family", "HashField", "LatticeSite", "__version__"]
