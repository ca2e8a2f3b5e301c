"""Exception types shared across the laboratory."""


class P3OError(Exception):
    """Base class for all laboratory errors."""


class ValidationError(P3OError):
    """A model, policy, or dataset field violates its invariants.

    The message names the first offending field, e.g. ``trans[0][1][0]``.
    """


class FormatError(P3OError):
    """A persisted file is malformed; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class HistoryExplosion(P3OError):
    """Enumerated history support exceeded the configured atom cap."""

    def __init__(self, n_atoms, cap):
        super().__init__(
            f"history support has {n_atoms} atoms, exceeding cap {cap}"
        )
        self.n_atoms = n_atoms
        self.cap = cap


class RankDeficient(P3OError):
    """An emission matrix required to have full latent rank does not."""

    def __init__(self, step, detail=""):
        msg = f"rank condition fails at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.step = step


class BridgeResidualError(P3OError):
    """A bridge-function linear system is inconsistent beyond solve_tol.

    Raised instead of silently returning a least-squares compromise; the
    offending step and relative residual are carried for diagnostics.
    """

    def __init__(self, step, residual, solve_tol):
        super().__init__(
            f"bridge system at step {step} is inconsistent: relative "
            f"residual {residual:.3e} exceeds solve_tol {solve_tol:.1e}"
        )
        self.step = step
        self.residual = residual
        self.solve_tol = solve_tol


class ZeroBehaviorProb(P3OError):
    """The behavior policy assigns probability zero on a support point."""

    def __init__(self, step, state, action):
        super().__init__(
            f"behavior probability is zero at step {step}, state {state}, "
            f"action {action}, but the point is on the support"
        )


class UnknownHistoryAtom(P3OError):
    """A table policy was queried at a history atom it does not define."""


class DegenerateDual(P3OError):
    """The dual second-moment matrix is numerically singular after ridging."""


class DegeneratePrimal(P3OError):
    """The primal normal matrix is numerically singular after ridging."""


class EmptyRegion(P3OError):
    """No candidate chain is feasible in the confidence region."""
