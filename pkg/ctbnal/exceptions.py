class CtbnError(Exception):
    def __init__(self, message="The CTBN computation failed."):
        super().__init__(message)


class ModelError(CtbnError):
    def __init__(self, message="The model dimensions are inconsistent."):
        super().__init__(message)


class InterventionError(CtbnError):
    def __init__(self, message="The intervention is inconsistent with the model or the initial state."):
        super().__init__(message)


class NumericalError(CtbnError):
    def __init__(self, message="A numerical computation produced non-finite or drifting values."):
        super().__init__(message)


class TrajectoryError(CtbnError):
    def __init__(self, message="The trajectory is malformed."):
        super().__init__(message)


class HyperparameterError(CtbnError):
    def __init__(self, message="Gamma hyperparameters must be strictly positive."):
        super().__init__(message)


class DesignError(CtbnError):
    def __init__(self, message="The design criterion received invalid inputs."):
        super().__init__(message)


class StrategyError(CtbnError):
    def __init__(self, message="Unknown design strategy or strategy/target mismatch."):
        super().__init__(message)


class ObservationError(CtbnError):
    def __init__(self, message="The observations are incompatible with the model support."):
        super().__init__(message)


class ConfigError(CtbnError):
    def __init__(self, problems=None):
        self.problems = list(problems or ["Invalid configuration."])
        super().__init__("\n".join(self.problems))


class InsufficientData(CtbnError):
    def __init__(self, message="Not enough data for the requested analysis."):
        super().__init__(message)
