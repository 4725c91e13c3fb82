"""Exception hierarchy shared across beamlab."""


class BeamlabError(Exception):
    pass


class GeometryError(BeamlabError, ValueError):
    """Invalid or degenerate geometric configuration."""


class DegeneratePointError(GeometryError):
    pass


class SingularGeometryError(GeometryError):
    pass


class SingularJacobianError(GeometryError):
    pass


class TableValidationError(BeamlabError, ValueError):
    pass


class NumericalError(BeamlabError, ArithmeticError):
    """Base for failures that come out of the numerics rather than the inputs."""


class DivergenceError(NumericalError):
    pass


class UnlocalizableError(NumericalError):
    """The Fisher information is singular: the position cannot be estimated."""


class DegenerateBasisError(NumericalError):
    pass


class ConfigError(BeamlabError, ValueError):
    pass
