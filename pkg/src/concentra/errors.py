"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can report
failures without parsing messages.
"""


class ConcentraError(Exception):
    code = "error"


class InvalidDimension(ConcentraError, ValueError):
    code = "invalid-dimension"


class InvalidIndex(ConcentraError, IndexError):
    code = "invalid-index"


class InvalidCodimension(ConcentraError, ValueError):
    code = "invalid-codimension"


class OutsideDomain(ConcentraError, ValueError):
    code = "outside-domain"


class OutsideCollar(ConcentraError, ValueError):
    code = "outside-collar"


class WeightDegenerate(ConcentraError, ValueError):
    code = "weight-degenerate"


class ResolutionError(ConcentraError):
    code = "resolution-error"


class SolverFailure(ConcentraError, RuntimeError):
    code = "solver-failure"


class StencilDegenerate(ConcentraError):
    code = "stencil-degenerate"


class JacobianSingular(SolverFailure):
    code = "jacobian-singular"


class NoConvergence(SolverFailure):
    code = "no-convergence"


class InvalidConfiguration(ConcentraError, ValueError):
    code = "invalid-configuration"


class NearDegenerateKernel(ConcentraError):
    code = "near-degenerate-kernel"


class CorrectionFailure(SolverFailure):
    code = "correction-failure"


class QuadratureFailure(ConcentraError, RuntimeError):
    code = "quadrature-failure"


class AssemblyInconsistency(ConcentraError):
    code = "assembly-inconsistency"


class SingularConfiguration(ConcentraError, ValueError):
    code = "singular-configuration"


class NoCriticalPoint(ConcentraError, RuntimeError):
    code = "no-critical-point"


class ExtractionFailure(ConcentraError):
    code = "extraction-failure"


class ConfigError(ConcentraError, ValueError):
    code = "config-error"
