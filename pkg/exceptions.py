class StructuralError(Exception):
    pass


class TransformValidationError(Exception):
    pass


class ClipParseError(Exception):
    def __init__(self, message, frame_index=None):
        super().__init__(message if frame_index is None else f'frame {frame_index}: {message}')
        self.frame_index = frame_index


class NoInteractionError(Exception):
    pass


class ConfigurationError(Exception):
    pass


class IntegrationError(Exception):
    pass


class FrameTagError(Exception):
    pass


class DegenerateConfigurationError(Exception):
    pass


class SimulationDivergedError(Exception):
    def __init__(self, step, message='non-finite simulation state'):
        super().__init__(f'step {step}: {message}')
        self.step = step


class ExpertStepError(Exception):
    def __init__(self, step, cause):
        super().__init__(f'expert failed at step {step}: {cause}')
        self.step = step


class UndefinedMetricError(Exception):
    pass


class UnknownStyleError(Exception):
    pass
