"""Signed bearer tokens shared by MEC applications across operators.

A token is ``b64url(claims) "." b64url(MAC(key(app), claims))`` where
``claims`` is the canonical (sorted-key, compact) JSON of every field but
the signature.  The same app deployed in two networks holds the same key,
which is what lets a token minted at home be checked abroad.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import asdict, dataclass

from fedmec.crypto import mac, mac_equal
from fedmec.errors import AudienceMismatch, BadSignature, Expired


@dataclass(frozen=True)
class AccessToken:
    issuer: str
    subject: str
    audience: str
    issued_at_ms: int
    expires_at_ms: int
    nonce: bytes
    signature: bytes = b""

    def claims(self) -> bytes:
        d = asdict(self)
        d.pop("signature")
        d["nonce"] = base64.b64encode(self.nonce).decode("ascii")
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def encode(self) -> str:
        return _b64(self.claims()) + "." + _b64(self.signature)


def _b64(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).decode("ascii")


def _unb64(text: str) -> bytes:
    raw = base64.urlsafe_b64decode(text.encode("ascii"))
    if _b64(raw) != text:
        raise ValueError("non-canonical base64")
    return raw


def sign(key: bytes, issuer: str, subject: str, audience: str, now_ms: float,
         lifetime_ms: int, nonce: bytes) -> AccessToken:
    issued = int(now_ms)
    unsigned = AccessToken(issuer, subject, audience, issued, issued + int(lifetime_ms), nonce)
    return AccessToken(**{**asdict(unsigned), "signature": mac(key, unsigned.claims())})


def parse(token: str) -> AccessToken:
    """Decode a token string; anything unparseable counts as a bad signature."""
    try:
        head, sig = token.split(".")
        claims = _unb64(head)
        d = json.loads(claims)
        tok = AccessToken(
            issuer=d["issuer"],
            subject=d["subject"],
            audience=d["audience"],
            issued_at_ms=d["issued_at_ms"],
            expires_at_ms=d["expires_at_ms"],
            nonce=base64.b64decode(d["nonce"], validate=True),
            signature=_unb64(sig),
        )
        if set(d) != {"issuer", "subject", "audience", "issued_at_ms", "expires_at_ms", "nonce"}:
            raise ValueError("unexpected claims")
        if tok.claims() != claims:
            raise ValueError("non-canonical claims")
    except (ValueError, KeyError, TypeError, binascii.Error, UnicodeError) as exc:
        raise BadSignature(f"unparseable token: {exc}") from exc
    return tok


def verify(token: str, app_id: str, key: bytes, now_ms: float) -> AccessToken:
    """Signature, expiry and audience checks; the IP binding is the caller's job."""
    tok = parse(token)
    if tok.audience != app_id:
        raise AudienceMismatch(f"token for {tok.audience!r} presented to {app_id!r}")
    if not mac_equal(mac(key, tok.claims()), tok.signature):
        raise BadSignature("signature does not verify")
    if not now_ms < tok.expires_at_ms:
        raise Expired(f"expired at {tok.expires_at_ms}, now {now_ms}")
    return tok
