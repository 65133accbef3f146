"""Exception types shared across the package."""


class KamError(Exception):
    """Base class for all package errors."""


class DomainError(KamError, ValueError):
    """A point lies outside the declared domain of a model or map."""


class AliasError(KamError, ValueError):
    """An angle grid is too coarse for the requested mode cutoff."""


class NonConvergence(KamError, RuntimeError):
    """A fixed-point or Newton iteration failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InconsistentGradient(KamError, RuntimeError):
    """Action and angle gradients of an extracted generating function disagree."""

    def __init__(self, residual, tol):
        super().__init__(f"gradient reconstruction residual {residual:.3e} exceeds {tol:.3e}")
        self.residual = residual
        self.tol = tol


class ZeroWavevector(KamError, ValueError):
    """The zero wavevector has no small divisor."""


class SmallDivisorViolation(KamError, ArithmeticError):
    """A retained Fourier mode has a divisor below the Diophantine floor."""

    def __init__(self, k, value, floor):
        super().__init__(f"divisor {value:.3e} below floor {floor:.3e} at k={tuple(k)}")
        self.k = tuple(int(x) for x in k)
        self.value = value
        self.floor = floor


class ScheduleBlowup(KamError, RuntimeError):
    """The measured perturbation size did not contract between iterations."""

    def __init__(self, v, e_old, e_new):
        super().__init__(f"E grew at step {v}: {e_old:.3e} -> {e_new:.3e}")
        self.v = v
        self.e_old = e_old
        self.e_new = e_new


class ParamError(KamError, ValueError):
    """Schedule or configuration parameters are out of range."""


class DegenerateError(KamError, ValueError):
    """A frequency map fails a non-degeneracy requirement."""


class FitError(KamError, ValueError):
    """A log-log fit cannot be formed from the supplied data."""


class SkippedNotAdmissible(KamError):
    """A requested comparison needs an action that fails the Diophantine sieve."""
