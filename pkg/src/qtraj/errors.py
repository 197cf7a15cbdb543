"""Exception hierarchy shared by every qtraj module."""


class QTrajError(Exception):
    """Base class for all qtraj errors."""


class DimensionMismatch(QTrajError, ValueError):
    """Objects built on different truncated Fock spaces were combined."""


class ZeroNormError(QTrajError, ArithmeticError):
    """A state vector has (numerically) zero norm."""


class NumericalGuard(QTrajError):
    """Base for guards that trip on numerically unsafe parameters.

    The CLI maps every subclass to exit code 3.
    """


class TruncationError(NumericalGuard):
    """Population leaked past the top retained Fock level."""


class StepSizeError(NumericalGuard):
    """The time step is too coarse for the requested integrator."""


class PositivityError(NumericalGuard):
    """An operator that must be positive has a negative eigenvalue."""


class DegenerateEffect(NumericalGuard):
    """Gaussian effect parameters are singular (perfect homodyne limit)."""


class IllConditioned(NumericalGuard):
    """Linear-inversion POVM reconstruction is not trustworthy."""


class MultiChannelUnsupported(QTrajError, ValueError):
    """Stochastic unravelings are defined for a single collapse operator."""


class ZeroGammaError(QTrajError, ValueError):
    """The linear jump unraveling needs a non-zero local-oscillator amplitude."""


class EmptyEnsemble(QTrajError, ValueError):
    """Ensemble statistics need at least two trajectories."""
