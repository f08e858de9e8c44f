"""Exception types shared across the package."""


class DocTag2VecError(Exception):
    """Base class for all doctag2vec errors."""


class ParseError(DocTag2VecError):
    """A dataset file record could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AllWordsFiltered(DocTag2VecError):
    """No token survived the min_count threshold."""


class EmptyVocabulary(DocTag2VecError):
    """A Huffman tree cannot be built over an empty vocabulary."""


class FormatError(DocTag2VecError):
    """A model or ensemble file is structurally malformed."""


class ChecksumError(DocTag2VecError):
    """Stored CRC-32 does not match the file contents."""


class DuplicateTag(DocTag2VecError):
    """A tag being added already exists in the tag dictionary."""


class UnknownTag(DocTag2VecError):
    """A document references a tag absent from the tag dictionary."""


class DegenerateTagSet(DocTag2VecError):
    """Negative sampling needs at least two tags."""


class ZeroVector(DocTag2VecError):
    """Cosine similarity is undefined for a zero-norm query vector."""


class EmptyDocument(DocTag2VecError):
    """No token of the document is in the vocabulary."""


class NaNDetected(DocTag2VecError):
    """A non-finite parameter value appeared during training."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite parameter detected after epoch {epoch}")
        self.epoch = epoch
