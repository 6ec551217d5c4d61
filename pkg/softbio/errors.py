from typing import Iterable


class SoftBioError(Exception):
    """Base error. `exit_code` is what the CLI exits with."""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# usage / spec errors (exit 2)

class ConfigError(SoftBioError):
    exit_code = 2


class SpecError(SoftBioError):
    exit_code = 2


class LeakageError(SoftBioError):
    exit_code = 2


# data / computation errors (exit 1)

class TraitParseError(SoftBioError):
    def __init__(self, kind: str, text: str):
        super().__init__(f"cannot parse {kind} label {text!r}")
        self.kind = kind
        self.text = text


class TraitRangeError(SoftBioError):
    pass


class TraitTypeError(SoftBioError):
    pass


class NoEvidenceError(SoftBioError):
    pass


class MissingTraitError(SoftBioError):
    pass


class SchemaError(SoftBioError):
    def __init__(self, detail: str, line: int | None = None, path: str | None = None):
        where = ""
        if path:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {detail}" if where else detail)
        self.line = line
        self.path = path


class FormatError(SoftBioError):
    pass


class JoinError(SoftBioError):
    def __init__(self, detail: str, ids: Iterable[str] = ()):
        self.ids = sorted(set(ids))
        shown = ", ".join(self.ids[:10])
        more = f" (+{len(self.ids) - 10} more)" if len(self.ids) > 10 else ""
        super().__init__(f"{detail}: {shown}{more}" if self.ids else detail)


class MetricError(SoftBioError):
    pass


class ProtocolError(SoftBioError):
    def __init__(self, detail: str, fold: int | None = None):
        super().__init__(f"fold {fold}: {detail}" if fold is not None else detail)
        self.fold = fold


class SelectionError(SoftBioError):
    def __init__(self, detail: str, subset: Iterable[str] = ()):
        self.subset = tuple(subset)
        super().__init__(f"{detail} (subset: {{{', '.join(self.subset)}}})")


class AnalysisError(SoftBioError):
    pass


class GenerationError(SoftBioError):
    def __init__(self, detail: str, shortfall: int = 0):
        super().__init__(detail)
        self.shortfall = shortfall


class DisjointInputsError(AnalysisError):
    """Inputs that were meant to describe the same images share none."""

    exit_code = 2
