"""Exception types raised by the construction and its diagnostics."""


class ScalarForgeError(Exception):
    code = "scalarforge_error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class BandUnresolved(ScalarForgeError):
    """The grid is too coarse for the requested frequency band."""
    code = "band_unresolved"


class OddMultiplier(ScalarForgeError):
    """The symbol has no even part, so no direction pair exists."""
    code = "odd_multiplier"


class EpsilonTooLarge(ScalarForgeError):
    """|eps| > 1/2 somewhere on the support of the energy profile."""
    code = "epsilon_too_large"


class PhaseEscape(ScalarForgeError):
    """A transported phase gradient left the plateau of its band."""
    code = "phase_escape"


class NotOdd(ScalarForgeError):
    """An operation that needs an odd symbol got something else."""
    code = "not_odd"


class NonzeroMean(ScalarForgeError, ValueError):
    code = "nonzero_mean"


class DefectTooLarge(ScalarForgeError):
    code = "defect_too_large"


class ConfigError(ScalarForgeError, ValueError):
    code = "config_error"


class BlowUp(ScalarForgeError):
    """A smooth evolution grew beyond the blow-up threshold."""
    code = "blow_up"
