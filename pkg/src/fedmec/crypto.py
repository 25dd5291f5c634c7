"""The one keyed hash used project-wide (AKA vectors and token signatures)."""

import hashlib
import hmac


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def mac_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
