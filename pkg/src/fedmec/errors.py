"""Exception types shared across the federation testbed."""


class FedMecError(Exception):
    """Base class for every testbed error."""


# wire
class InvariantViolation(FedMecError):
    pass


class MalformedFrame(FedMecError):
    pass


class NeedMoreBytes(FedMecError):
    def __init__(self, needed: int):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


# netsim
class NoRoute(FedMecError):
    pass


class LivelockGuard(FedMecError):
    pass


# cellular
class UnknownSubscriber(FedMecError):
    pass


class NetworkAuthFailure(FedMecError):
    pass


class ResFailure(FedMecError):
    pass


class NotAttached(FedMecError):
    pass


# mecsys
class OrphanContext(FedMecError):
    pass


class UnknownSourceIP(FedMecError):
    pass


class NotEntitled(FedMecError):
    pass


class SubscriptionPending(FedMecError):
    pass


class TokenRejected(FedMecError):
    """Base for token validation failures."""


class BadSignature(TokenRejected):
    pass


class Expired(TokenRejected):
    pass


class AudienceMismatch(TokenRejected):
    pass


class SubjectIpMismatch(TokenRejected):
    pass


class HomeUnreachable(FedMecError):
    pass


class NoNeighbors(FedMecError):
    pass


class StaleWatch(FedMecError):
    pass


class SourceStateGone(FedMecError):
    pass


class NoSession(FedMecError):
    pass


# fedproxy
class DuplicatePrefix(FedMecError):
    pass


class UnroutableRealm(FedMecError):
    pass


class CorrelationLost(FedMecError):
    pass


# harness
class ConfigMismatch(FedMecError):
    pass


class ConfigError(FedMecError):
    pass


class IoFailure(FedMecError):
    pass


# name -> class, used to carry error codes across the wire
ERROR_CODES = {
    cls.__name__: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, FedMecError)
}


def error_from_code(code: str, detail: str = "") -> FedMecError:
    cls = ERROR_CODES.get(code, FedMecError)
    return cls(detail or code)
