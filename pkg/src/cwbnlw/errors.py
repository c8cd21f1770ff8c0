"""Exception types. Each carries a short machine-readable ``code``."""


class CWBError(Exception):
    code = "cwb_error"

    def __init__(self, message="", **info):
        super().__init__(message or self.code)
        self.info = info


class SupportExceeded(CWBError):
    code = "support_exceeded"


class CertificateFailed(CWBError):
    code = "certificate_failed"


class ResidualIncrease(CWBError):
    code = "residual_increase"


class OutsidePerturbativeRegime(CWBError):
    code = "outside_perturbative_regime"


class FrequencyCollapse(CWBError):
    code = "frequency_collapse"


class ExcludedParameter(CWBError):
    code = "excluded_parameter"


class NoOuterConvergence(CWBError):
    code = "no_outer_convergence"


class InstanceGenerationFailed(CWBError):
    code = "instance_generation_failed"


class ConfigError(CWBError):
    code = "config_error"
