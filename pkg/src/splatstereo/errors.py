"""Exception hierarchy shared by every module."""


class SplatStereoError(Exception):
    """Base class for all errors raised by this package."""


class MissingFile(SplatStereoError, FileNotFoundError):
    pass


class MalformedRecord(SplatStereoError, ValueError):
    def __init__(self, path, where, reason):
        self.path = str(path)
        self.where = where
        self.reason = reason
        super().__init__(f"{self.path} ({where}): {reason}")


class UnknownCameraModel(SplatStereoError, ValueError):
    def __init__(self, camera_id, model):
        self.camera_id = camera_id
        self.model = model
        super().__init__(f"camera {camera_id}: unsupported camera model {model!r}")


class NonFiniteInput(SplatStereoError, ValueError):
    pass


class MalformedHeader(SplatStereoError, ValueError):
    pass


class TruncatedBody(SplatStereoError, ValueError):
    pass


class UnsupportedEncoding(SplatStereoError, ValueError):
    pass


class MissingProperty(SplatStereoError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"missing PLY property {self.name!r}"


class EmptyMesh(SplatStereoError, ValueError):
    pass


class EmptyModel(SplatStereoError, ValueError):
    pass


class SizeMismatch(SplatStereoError, ValueError):
    pass


class UnsortedInput(SplatStereoError, ValueError):
    pass


class NonPositiveBaseline(SplatStereoError, ValueError):
    pass


class RenderFailure(SplatStereoError, RuntimeError):
    def __init__(self, camera, reason):
        self.camera = camera
        super().__init__(f"rendering failed for camera {camera}: {reason}")


class EmptyEvaluationSet(SplatStereoError, ValueError):
    pass


class EmptyInput(SplatStereoError, ValueError):
    pass


class InconsistentSuite(SplatStereoError, ValueError):
    pass
