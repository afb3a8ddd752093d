"""Accounts and token-based authentication.

Three access levels exist: anonymous visitors (no token), registered users,
and administrators. Registration is open but inert until an administrator
approves the account; only then can the user log in and receive a signed
token to present on subsequent requests.

Tokens are standard JWTs (HS256) so any off-the-shelf client library can
inspect them; signing and verification are done here with the stdlib.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import time
import uuid
from dataclasses import dataclass
from typing import Callable

from . import errors
from .domain import ROLE_ADMIN, ROLE_REGISTERED, UserAccount
from .storage import Store

DEFAULT_TOKEN_TTL = 24 * 3600

_SCRYPT_N = 2**14
_SCRYPT_R = 8
_SCRYPT_P = 1
_SALT_LEN = 16
_KEY_LEN = 32


def hash_password(password: str, salt: bytes | None = None) -> bytes:
    """salt || scrypt(password); the salt travels inside the digest."""
    if not isinstance(password, str) or password == "":
        raise errors.InvalidInput("password must be a non-empty string")
    salt = salt if salt is not None else os.urandom(_SALT_LEN)
    key = hashlib.scrypt(
        password.encode("utf-8"), salt=salt, n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P, dklen=_KEY_LEN
    )
    return salt + key


def verify_password(password: str, digest: bytes) -> bool:
    if len(digest) != _SALT_LEN + _KEY_LEN:
        return False
    salt = digest[:_SALT_LEN]
    try:
        candidate = hash_password(password, salt)
    except errors.InvalidInput:
        return False
    return hmac.compare_digest(candidate, digest)


# ------------------------------------------------------------------ tokens


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _unb64url(text: str) -> bytes:
    pad = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + pad)


def encode_token(claims: dict, secret: str) -> str:
    header = _b64url(json.dumps({"alg": "HS256", "typ": "JWT"}, separators=(",", ":")).encode())
    body = _b64url(json.dumps(claims, separators=(",", ":"), sort_keys=True).encode())
    signing_input = f"{header}.{body}".encode("ascii")
    sig = hmac.new(secret.encode("utf-8"), signing_input, hashlib.sha256).digest()
    return f"{header}.{body}.{_b64url(sig)}"


def decode_token(token: str, secret: str) -> dict:
    """Verify signature and structure; expiry is checked by the caller."""
    if not isinstance(token, str) or token.count(".") != 2:
        raise errors.BadSignature("token must have three dot-separated parts")
    header_b64, body_b64, sig_b64 = token.split(".")
    try:
        header = json.loads(_unb64url(header_b64))
        claims = json.loads(_unb64url(body_b64))
        sig = _unb64url(sig_b64)
    except (ValueError, json.JSONDecodeError):
        raise errors.BadSignature("token is not base64url-encoded JSON") from None
    if not isinstance(header, dict) or header.get("alg") != "HS256":
        raise errors.BadSignature(f"unsupported algorithm {header.get('alg')!r}")
    signing_input = f"{header_b64}.{body_b64}".encode("ascii")
    expected = hmac.new(secret.encode("utf-8"), signing_input, hashlib.sha256).digest()
    if not hmac.compare_digest(sig, expected):
        raise errors.BadSignature("signature mismatch")
    if not isinstance(claims, dict):
        raise errors.BadSignature("claims must be a JSON object")
    return claims


@dataclass(frozen=True)
class TokenClaims:
    sub: str
    username: str
    role: str
    iat: int
    exp: int


class AuthService:
    """Registration, approval, login and token verification."""

    def __init__(
        self,
        store: Store,
        secret: str,
        token_ttl_seconds: int = DEFAULT_TOKEN_TTL,
        clock: Callable[[], float] = time.time,
    ):
        if not secret:
            raise errors.InvalidInput("auth secret must be non-empty")
        self.store = store
        self.secret = secret
        self.token_ttl = int(token_ttl_seconds)
        self.clock = clock

    # ------------------------------------------------------------- accounts

    def register(self, username: str, password: str) -> UserAccount:
        """Creates a pending account; an administrator must approve it."""
        user = UserAccount(
            id=str(uuid.uuid4()),
            username=username.strip(),
            password_digest=hash_password(password),
            role=ROLE_REGISTERED,
            approved=False,
        )
        self.store.put_user(user)
        return user

    def approve(self, username: str, actor_role: str) -> UserAccount:
        if actor_role != ROLE_ADMIN:
            raise errors.Forbidden("only administrators may approve accounts")
        user = self.store.get_user_by_username(username)
        if user is None:
            raise errors.NotFound(f"no account named {username!r}")
        approved = UserAccount(
            id=user.id,
            username=user.username,
            password_digest=user.password_digest,
            role=user.role,
            approved=True,
        )
        self.store.put_user(approved)
        return approved

    def create_admin(self, username: str, password: str) -> UserAccount:
        """Bootstrap helper: ensures an approved administrator exists.

        An existing account with this username is left untouched.
        """
        existing = self.store.get_user_by_username(username)
        if existing is not None:
            return existing
        user = UserAccount(
            id=str(uuid.uuid4()),
            username=username.strip(),
            password_digest=hash_password(password),
            role=ROLE_ADMIN,
            approved=True,
        )
        self.store.put_user(user)
        return user

    def pending_users(self) -> list[UserAccount]:
        return self.store.list_users(approved=False)

    # --------------------------------------------------------------- tokens

    def login(self, username: str, password: str) -> str:
        """Returns a signed token. Credential failures are indistinguishable."""
        user = self.store.get_user_by_username(username)
        if user is None or not verify_password(password, user.password_digest):
            raise errors.BadCredentials("unknown username or wrong password")
        if not user.approved:
            raise errors.NotApproved("account awaits administrator approval")
        now = int(self.clock())
        claims = {
            "sub": user.id,
            "username": user.username,
            "role": user.role,
            "iat": now,
            "exp": now + self.token_ttl,
        }
        return encode_token(claims, self.secret)

    def verify(self, token: str | None) -> TokenClaims:
        if not token:
            raise errors.MissingToken("no token presented")
        claims = decode_token(token, self.secret)
        try:
            parsed = TokenClaims(
                sub=str(claims["sub"]),
                username=str(claims["username"]),
                role=str(claims["role"]),
                iat=int(claims["iat"]),
                exp=int(claims["exp"]),
            )
        except (KeyError, TypeError, ValueError):
            raise errors.BadSignature("token misses required claims") from None
        if parsed.role not in (ROLE_REGISTERED, ROLE_ADMIN):
            raise errors.BadSignature(f"unknown role {parsed.role!r}")
        if self.clock() >= parsed.exp:
            raise errors.Expired("token has expired")
        return parsed
