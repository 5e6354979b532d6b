"""Exception types shared across the toolkit."""


class NfposeError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(NfposeError):
    pass


class MalformedLine(NfposeError):
    def __init__(self, line_no: int, message: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if message else f"line {line_no}")


class NonUnitQuaternion(MalformedLine):
    pass


class NonRotationMatrix(MalformedLine):
    pass


class NonPositiveDt(NfposeError):
    pass


class AngleNearPi(NfposeError):
    pass


class EmptyField(NfposeError):
    pass


class ZeroGradient(NfposeError):
    pass


class TooFewSamples(NfposeError):
    pass


class DegenerateField(NfposeError):
    pass


class NonFiniteObjective(NfposeError):
    pass


class SingularHessian(NfposeError):
    def __init__(self, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"lower-level Hessian condition number {condition_number:.3e}")


class AllSamplesDegenerate(NfposeError):
    pass


class SampleSetMismatch(NfposeError):
    pass


class DegenerateConfiguration(NfposeError):
    pass


class TrajectoryTooShort(NfposeError):
    pass
