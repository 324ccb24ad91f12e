"""Exception hierarchy shared by every pipeline stage."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class DataError(PipelineError, ValueError):
    """Input data or model output failed validation (CLI exit code 1)."""


class CorpusFormatError(DataError):
    def __init__(self, message: str, line_number: int = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DuplicateDocumentError(DataError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"duplicate doc_id: {doc_id}")


class TrustTableError(DataError):
    pass


class QueryPlanError(DataError):
    pass


class GenerationError(DataError):
    pass


class PromptTemplateError(DataError):
    pass


class ScoringError(DataError):
    pass


class CitationIntegrityError(DataError):
    def __init__(self, topic_id: str, doc_id: str):
        self.topic_id = topic_id
        self.doc_id = doc_id
        super().__init__(f"topic {topic_id}: citation {doc_id} not found in evidence dump")


class IndexFormatError(PipelineError, RuntimeError):
    pass


class IndexNotOpenError(PipelineError, RuntimeError):
    pass


class GatewayConfigError(PipelineError, RuntimeError):
    pass


class TransportError(PipelineError, RuntimeError):
    def __init__(self, message: str, status: int = None):
        self.status = status
        super().__init__(message if status is None else f"{message} (last status {status})")
