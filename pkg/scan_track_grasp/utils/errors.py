''' Exceptions raised across the scan-and-track pipeline '''


class PipelineError(RuntimeError):
    pass


class InvalidInputError(PipelineError, ValueError):
    ''' A precondition of an operation does not hold (sizes, ids, ranges). '''


class RegistrationFailedError(PipelineError):
    ''' The object could not be initialized from its first observation. '''


class TrackingLostError(PipelineError):
    ''' Registration did not find enough correspondences. '''

    def __init__(self, message, inlier_fraction=0.0):
        super().__init__(message)
        self.inlier_fraction = inlier_fraction


class EmptyMeshError(PipelineError):
    pass


class FrozenVolumeError(PipelineError):
    ''' A TSDF volume was written to while reconstruction is frozen. '''
