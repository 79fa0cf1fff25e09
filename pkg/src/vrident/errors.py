"""Exception hierarchy. Each error carries the pipeline stage that raised it."""


class VrIdentError(Exception):
    module = "vrident"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class ConfigError(VrIdentError):
    module = "config"


class SchemaError(VrIdentError):
    module = "domain-model"


class IngestError(VrIdentError):
    module = "ingest"


class BlockingError(VrIdentError):
    module = "blocking"


class FeatureError(VrIdentError):
    module = "features"


class ClassifierError(VrIdentError):
    module = "classifier"


class EvaluationError(VrIdentError):
    module = "adversary-eval"


class SynthError(VrIdentError):
    module = "synth"
