"""Exception types shared across the toolkit."""


class GridSentryError(Exception):
    pass


class DomainError(GridSentryError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ParseError(GridSentryError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class UnknownCall(GridSentryError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"call {self.name!r} has no weight in the adaptive table"


class SessionError(GridSentryError):
    pass


class ClassMismatch(GridSentryError):
    pass


class LoadError(GridSentryError):
    def __init__(self, path, reason):
        self.path = path
        super().__init__(f"cannot load profile {path}: {reason}")


class NoProfile(GridSentryError, LookupError):
    def __init__(self, device_class):
        self.device_class = device_class
        super().__init__(f"no ground-truth profile for class {device_class}")


class ProfileIncomplete(GridSentryError):
    pass
