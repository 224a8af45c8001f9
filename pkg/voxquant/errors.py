'''
Exception hierarchy shared by every stage of the toolchain.
'''

USAGE_ERROR = 2
DATA_ERROR = 3
BUILD_ERROR = 4


class VoxquantError(Exception):
    '''
    Root of all toolchain errors. Carries the CLI exit code and, once a
    pipeline stage has seen it, the name of that stage.
    '''
    exit_code = DATA_ERROR

    def __init__(self, message=''):
        super().__init__(message)
        self.message = message
        self.stage = None

    def __str__(self):
        if self.stage:
            return '[{}] {}'.format(self.stage, self.message)
        return self.message


# graph-ir

class GraphError(VoxquantError):
    pass


class DocumentSyntaxError(GraphError):
    '''
    Malformed model document. line/offset point into the JSON text when known.
    '''

    def __init__(self, message, line=None, offset=None):
        if line is not None:
            message = '{} (line {}, column {})'.format(message, line, offset)
        super().__init__(message)
        self.line = line
        self.offset = offset


class UnknownOpKind(GraphError):
    pass


class DuplicateTensorName(GraphError):
    pass


class WeightOutOfBounds(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class ShapeMismatch(GraphError):
    pass


class TypeMismatch(GraphError):
    pass


class DanglingInput(GraphError):
    pass


# calibration

class CalibrationError(VoxquantError):
    pass


class NonFiniteValue(CalibrationError):
    pass


class EmptyObserver(CalibrationError):
    pass


class EmptyDataset(CalibrationError):
    pass


class InputShapeMismatch(CalibrationError):
    pass


class QuantizedValueOutOfRange(CalibrationError):
    pass


# qdq

class QdqError(VoxquantError):
    pass


class MissingCalibration(QdqError):
    pass


class PolicyUnsupportedKind(QdqError):
    exit_code = USAGE_ERROR


# engine build

class EngineBuildError(VoxquantError):
    exit_code = BUILD_ERROR


class UnsupportedBits(EngineBuildError):
    pass


class MalformedQdqPattern(EngineBuildError):
    pass


class AccumulatorOverflow(EngineBuildError):
    pass


# execution

class ExecutionError(VoxquantError):
    pass


class WorkspaceTooSmall(ExecutionError):
    pass


class LabelOutOfRange(ExecutionError):
    pass


# engine file

class EngineFormatError(VoxquantError):
    pass


class BadMagic(EngineFormatError):
    pass


class UnsupportedVersion(EngineFormatError):
    pass


class TruncatedFile(EngineFormatError):
    pass


class ChecksumMismatch(EngineFormatError):
    pass


# bench

class BenchError(VoxquantError):
    pass


class InvalidConfig(BenchError):
    exit_code = USAGE_ERROR


class MissingArtifact(BenchError):
    pass


class MalformedArtifact(BenchError):
    '''
    A calibration table, dataset description or volume sidecar that exists
    but does not parse.
    '''


class ScalingRegression(BenchError):
    pass
