"""Access control, credential management and flow-based application security.

Credentialing follows a registration-plus-certificate-authority pattern:
subjects enroll, receive a signed certificate, and exchange it for a
short-lived session token that guards every broker operation. Application
security is a default-deny flow check over ``<source, sink>`` labels; denied
envelopes are retained in a quarantine log instead of being dropped.

Messages on the vehicle-to-vehicle leg are signed but not encrypted; messages
on the infrastructure leg are signed and encrypted.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import re
import secrets
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .model import Envelope, pattern_matches, validate_pattern

logger = logging.getLogger(__name__)

CERT_VALIDITY_MS = 24 * 3600 * 1000
TOKEN_VALIDITY_MS = 3600 * 1000

_PSEUDONYM_RE = re.compile(r"^p-[0-9a-f]{12}$")


class SecurityError(Exception):
    """Base class for credential and protection failures."""


class AuthError(SecurityError):
    """Missing, expired or forged credential/token."""


class CertificateError(SecurityError):
    def __init__(self, reason: "QuarantineReason", message: str):
        super().__init__(message)
        self.reason = reason


class Role(Enum):
    MOBILE_EDGE = "mobile_edge"
    FIXED_EDGE = "fixed_edge"
    SYSTEM_EDGE = "system_edge"
    APPLICATION = "application"
    DEVELOPER = "developer"


class Link(Enum):
    V2V = "v2v"
    V2I = "v2i"


class QuarantineReason(Enum):
    NO_POLICY = "NoPolicy"
    SINK_MISMATCH = "SinkMismatch"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"


@dataclass(frozen=True)
class Certificate:
    subject: str
    role: Role
    public_key: bytes
    not_before_ms: int
    not_after_ms: int
    issuer_signature: bytes

    def __post_init__(self) -> None:
        if self.not_before_ms >= self.not_after_ms:
            raise SecurityError("certificate validity window is empty")


@dataclass(frozen=True)
class SessionToken:
    value: str
    subject: str
    role: Role
    expires_at_ms: int


@dataclass(frozen=True)
class FlowPolicy:
    """Allow-rule: data from matching sources may flow to matching sinks."""

    source_pattern: str
    sink_pattern: str

    def __post_init__(self) -> None:
        validate_pattern(self.source_pattern)
        validate_pattern(self.sink_pattern)


@dataclass(frozen=True)
class FlowDecision:
    allowed: bool
    reason: Optional[QuarantineReason] = None


ALLOW = FlowDecision(True, None)


@dataclass(frozen=True)
class QuarantineRecord:
    topic: str
    producer: str
    seq: int
    consumer: str
    reason: QuarantineReason
    t_ms: int

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "producer": self.producer,
            "seq": self.seq,
            "consumer": self.consumer,
            "reason": self.reason.value,
            "t_ms": self.t_ms,
        }


@dataclass(frozen=True)
class AccessManifest:
    """Per-subject declaration of what it may write, read and use."""

    subject: str
    writable_topics: Tuple[str, ...] = ()
    readable_topics: Tuple[str, ...] = ()
    services: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for p in self.writable_topics + self.readable_topics:
            validate_pattern(p)

    def may_write(self, topic: str) -> bool:
        return any(pattern_matches(p, topic) for p in self.writable_topics)

    def may_read(self, pattern: str) -> bool:
        # a subscription pattern is readable if it is covered literally or the
        # manifest grants a prefix that covers the whole pattern
        for granted in self.readable_topics:
            if granted == pattern:
                return True
            if granted.endswith("*"):
                probe = pattern[:-1] if pattern.endswith("*") else pattern
                if probe.startswith(granted[:-1]):
                    return True
        return False


def check_flow(env: Envelope, consumer_id: str, policies: List[FlowPolicy]) -> FlowDecision:
    """Default-deny flow decision: pure function of (label, consumer, policies).

    Allow iff some policy matches both the envelope's source label and the
    consumer; otherwise quarantine with NoPolicy (no source matched) or
    SinkMismatch (a source matched but its sinks did not cover the consumer).
    """
    source_matched = False
    for policy in policies:
        if pattern_matches(policy.source_pattern, env.label.source):
            source_matched = True
            if pattern_matches(policy.sink_pattern, consumer_id):
                return ALLOW
    if source_matched:
        return FlowDecision(False, QuarantineReason.SINK_MISMATCH)
    return FlowDecision(False, QuarantineReason.NO_POLICY)


# ---------------------------------------------------------------------------
# Credential management
# ---------------------------------------------------------------------------


def _cert_signing_bytes(subject: str, role: Role, public_key: bytes, nb: int, na: int) -> bytes:
    return json.dumps(
        {"subject": subject, "role": role.value, "pk": public_key.hex(), "nb": nb, "na": na},
        sort_keys=True,
    ).encode()


class CertificateAuthority:
    """Registration check plus certificate issuance, verification and revocation."""

    def __init__(self, now_ms: Callable[[], int], validity_ms: int = CERT_VALIDITY_MS):
        self._now_ms = now_ms
        self._validity_ms = validity_ms
        self._key = Ed25519PrivateKey.generate()
        self._pub = self._key.public_key()
        self._revoked: set = set()
        self._issued: Dict[str, Certificate] = {}
        self._lock = threading.Lock()

    def register_and_issue(self, identity: str, role: Role) -> Tuple[Certificate, Ed25519PrivateKey]:
        """Registration check, then issue a certificate and its private key."""
        if not identity:
            raise SecurityError("empty identity")
        if not isinstance(role, Role):
            raise SecurityError(f"invalid role {role!r}")
        with self._lock:
            if identity in self._revoked:
                raise AuthError(f"identity {identity!r} is revoked")
            subject_key = Ed25519PrivateKey.generate()
            pub_bytes = subject_key.public_key().public_bytes_raw()
            nb = self._now_ms()
            na = nb + self._validity_ms
            sig = self._key.sign(_cert_signing_bytes(identity, role, pub_bytes, nb, na))
            cert = Certificate(identity, role, pub_bytes, nb, na, sig)
            self._issued[identity] = cert
            return cert, subject_key

    def revoke(self, identity: str) -> None:
        with self._lock:
            self._revoked.add(identity)

    def certificate_for(self, subject: str) -> Optional[Certificate]:
        return self._issued.get(subject)

    def verify_certificate(self, cert: Certificate, at_ms: Optional[int] = None) -> None:
        """Raise CertificateError unless the certificate is authentic and current."""
        at = self._now_ms() if at_ms is None else at_ms
        if cert.subject in self._revoked:
            raise CertificateError(QuarantineReason.EXPIRED, f"{cert.subject}: revoked")
        if not (cert.not_before_ms <= at < cert.not_after_ms):
            raise CertificateError(
                QuarantineReason.EXPIRED,
                f"{cert.subject}: outside validity window at t={at}",
            )
        try:
            self._pub.verify(
                cert.issuer_signature,
                _cert_signing_bytes(
                    cert.subject, cert.role, cert.public_key, cert.not_before_ms, cert.not_after_ms
                ),
            )
        except InvalidSignature:
            raise CertificateError(
                QuarantineReason.BAD_SIGNATURE, f"{cert.subject}: issuer signature invalid"
            ) from None


class TokenStore:
    """Opaque session tokens bound to a certificate subject."""

    def __init__(self, now_ms: Callable[[], int], validity_ms: int = TOKEN_VALIDITY_MS):
        self._now_ms = now_ms
        self._validity_ms = validity_ms
        self._tokens: Dict[str, SessionToken] = {}
        self._lock = threading.Lock()

    def authenticate(self, cert: Certificate, ca: CertificateAuthority) -> SessionToken:
        now = self._now_ms()
        try:
            ca.verify_certificate(cert, now)
        except CertificateError as e:
            raise AuthError(f"authentication failed: {e}") from e
        expires = min(now + self._validity_ms, cert.not_after_ms)
        token = SessionToken(secrets.token_hex(16), cert.subject, cert.role, expires)
        with self._lock:
            self._tokens[token.value] = token
        return token

    def validate(self, token_value: str) -> SessionToken:
        with self._lock:
            token = self._tokens.get(token_value)
        if token is None:
            raise AuthError("unknown token")
        if self._now_ms() >= token.expires_at_ms:
            raise AuthError(f"token for {token.subject} expired")
        return token


# ---------------------------------------------------------------------------
# Envelope protection
# ---------------------------------------------------------------------------


@dataclass
class KeyMaterial:
    """A producer's signing key plus the shared key for the encrypted leg."""

    signer: Ed25519PrivateKey
    channel_key: Optional[bytes] = None


def _envelope_signing_bytes(env: Envelope, payload: bytes) -> bytes:
    digest = hashlib.sha256(payload).hexdigest()
    return f"{env.topic}|{env.producer}|{env.seq}|{env.t_generated_ms}|{digest}".encode()


def _nonce_for(env: Envelope) -> bytes:
    # unique per (topic, producer, seq) within a run; the channel key is
    # run-scoped so nonce reuse across runs is harmless
    return hashlib.sha256(f"{env.topic}|{env.producer}|{env.seq}".encode()).digest()[:12]


def protect_envelope(env: Envelope, link: Link, keys: KeyMaterial) -> Envelope:
    """Sign (V2V) or sign and encrypt (V2I) an envelope's payload."""
    if keys.signer is None:
        raise SecurityError("missing signing key")
    sig = keys.signer.sign(_envelope_signing_bytes(env, env.payload))
    if link is Link.V2V:
        return replace(env, signature=sig, encrypted=False)
    if keys.channel_key is None:
        raise SecurityError("missing channel key for encrypted leg")
    ct = AESGCM(keys.channel_key).encrypt(_nonce_for(env), env.payload, None)
    return replace(env, payload=ct, signature=sig, encrypted=True)


def unprotect_envelope(
    env: Envelope, public_key: bytes, channel_key: Optional[bytes] = None
) -> Envelope:
    """Invert protect_envelope: decrypt if needed and verify the signature.

    Raises CertificateError(BadSignature) on any integrity failure.
    """
    payload = env.payload
    if env.encrypted:
        if channel_key is None:
            raise SecurityError("missing channel key for encrypted envelope")
        try:
            payload = AESGCM(channel_key).decrypt(_nonce_for(env), env.payload, None)
        except InvalidTag:
            raise CertificateError(
                QuarantineReason.BAD_SIGNATURE, "ciphertext integrity check failed"
            ) from None
    if env.signature is None:
        raise CertificateError(QuarantineReason.BAD_SIGNATURE, "missing signature")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(
            env.signature, _envelope_signing_bytes(env, payload)
        )
    except InvalidSignature:
        raise CertificateError(QuarantineReason.BAD_SIGNATURE, "signature invalid") from None
    return replace(env, payload=payload, encrypted=False)


def verify_envelope(env: Envelope, public_key: bytes, channel_key: Optional[bytes] = None) -> bool:
    try:
        unprotect_envelope(env, public_key, channel_key)
        return True
    except SecurityError:
        return False


def decrypt_payload(env: Envelope, channel_key: bytes) -> bytes:
    """Decrypt an encrypted-leg payload; the AEAD tag authenticates integrity."""
    if not env.encrypted:
        return env.payload
    try:
        return AESGCM(channel_key).decrypt(_nonce_for(env), env.payload, None)
    except InvalidTag:
        raise CertificateError(
            QuarantineReason.BAD_SIGNATURE, "ciphertext integrity check failed"
        ) from None


# ---------------------------------------------------------------------------
# Sensitive-field scrubbing
# ---------------------------------------------------------------------------


def pseudonym(vehicle_id: str, salt: bytes) -> str:
    """Keyed, run-stable pseudonym; already-pseudonymized ids map to themselves."""
    if _PSEUDONYM_RE.match(vehicle_id):
        return vehicle_id
    mac = hmac.new(salt, vehicle_id.encode(), hashlib.sha256).hexdigest()
    return f"p-{mac[:12]}"


def scrub_payload(payload: bytes, salt: bytes) -> bytes:
    """Replace vehicle identifiers in a JSON record payload with pseudonyms.

    Payloads without sensitive fields pass through byte-identical; payloads
    that do not decode are passed through unchanged with a logged warning.
    """
    try:
        record = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        logger.warning("scrub: undecodable payload passed through (%d bytes)", len(payload))
        return payload
    if not isinstance(record, dict) or "vehicle_id" not in record:
        return payload
    vid = record["vehicle_id"]
    anon = pseudonym(str(vid), salt)
    if anon == vid:
        return payload
    record["vehicle_id"] = anon
    if "msg_id" in record and isinstance(record["msg_id"], str):
        # msg_ids embed the vehicle id; keep the per-vehicle suffix
        head, sep, tail = record["msg_id"].rpartition(":")
        record["msg_id"] = f"{anon}{sep}{tail}" if sep else anon
    return json.dumps(record, sort_keys=True).encode()


def scrub(env: Envelope, salt: bytes) -> Envelope:
    scrubbed = scrub_payload(env.payload, salt)
    return env if scrubbed is env.payload else replace(env, payload=scrubbed)


class QuarantineStore:
    """Append-only log of envelopes withheld from delivery."""

    def __init__(self) -> None:
        self._records: List[QuarantineRecord] = []
        self._lock = threading.Lock()

    def add(self, record: QuarantineRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> List[QuarantineRecord]:
        with self._lock:
            return list(self._records)

    def count(self) -> int:
        with self._lock:
            return len(self._records)

    def count_for(self, consumer: str) -> int:
        with self._lock:
            return sum(1 for r in self._records if r.consumer == consumer)


@dataclass
class Enrollment:
    certificate: Certificate
    keys: KeyMaterial
    token: SessionToken


class SecurityService:
    """Run-scoped security state: CA, tokens, policies, quarantine, scrub salt."""

    def __init__(
        self,
        now_ms: Callable[[], int],
        policies: Optional[List[FlowPolicy]] = None,
        salt: Optional[bytes] = None,
        manifests: Optional[Dict[str, AccessManifest]] = None,
    ):
        self.now_ms = now_ms
        self.ca = CertificateAuthority(now_ms)
        self.tokens = TokenStore(now_ms)
        self.policies: List[FlowPolicy] = list(policies or [])
        self.quarantine = QuarantineStore()
        self.salt = salt if salt is not None else secrets.token_bytes(16)
        self.channel_key = AESGCM.generate_key(bit_length=128)
        self.manifests: Dict[str, AccessManifest] = dict(manifests or {})
        self._lock = threading.Lock()

    def enroll(self, identity: str, role: Role, with_channel_key: bool = False) -> Enrollment:
        """Issue a certificate, authenticate, and hand back working key material."""
        cert, key = self.ca.register_and_issue(identity, role)
        token = self.tokens.authenticate(cert, self.ca)
        keys = KeyMaterial(signer=key, channel_key=self.channel_key if with_channel_key else None)
        return Enrollment(cert, keys, token)

    def manifest_for(self, subject: str) -> Optional[AccessManifest]:
        return self.manifests.get(subject)

    def set_manifest(self, manifest: AccessManifest) -> None:
        with self._lock:
            self.manifests[manifest.subject] = manifest

    def check_flow(self, env: Envelope, consumer_id: str) -> FlowDecision:
        return check_flow(env, consumer_id, self.policies)

    def record_quarantine(
        self, env: Envelope, consumer: str, reason: QuarantineReason, t_ms: int
    ) -> None:
        self.quarantine.add(
            QuarantineRecord(env.topic, env.producer, env.seq, consumer, reason, t_ms)
        )

    def scrub(self, env: Envelope) -> Envelope:
        return scrub(env, self.salt)

    def pseudonym(self, vehicle_id: str) -> str:
        return pseudonym(vehicle_id, self.salt)
