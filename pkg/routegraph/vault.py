"""
Local credential vault.

Credentials captured during discovery never leave the machine: skill
packages carry only vault keys (``domain:kind:location``) and the values are
stored here, Fernet-encrypted.
"""

import base64
import hashlib
import json
import os
import threading
from collections.abc import Iterator
from pathlib import Path

import structlog
from cryptography.fernet import Fernet, InvalidToken

from routegraph.errors import AuthMissing
from routegraph.models import AuthDescriptor, AuthKind

logger = structlog.get_logger(__name__)

VAULT_KEY_ENV = "ROUTEGRAPH_VAULT_KEY"


def _fernet_from_secret(secret: str) -> Fernet:
    key = secret.strip()
    try:
        return Fernet(key.encode())
    except ValueError:
        # any other passphrase is stretched into a key
        return Fernet(base64.urlsafe_b64encode(hashlib.sha256(key.encode()).digest()))


def _write_private(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.chmod(path, 0o600)


class CredentialVault:
    """
    Encrypted key/value store for auth material.

    With ``path=None`` the vault lives in memory only. Otherwise the
    ciphertexts are kept in a JSON file and the key comes from
    ``ROUTEGRAPH_VAULT_KEY`` or a generated 0600 key file next to it.
    """

    def __init__(self, path: Path | None = None, key: str | None = None) -> None:
        self.path = path
        self._lock = threading.Lock()
        self._fernet = self._resolve_key(key)
        self._tokens: dict[str, str] = self._load()

    def _resolve_key(self, key: str | None) -> Fernet:
        secret = key or os.environ.get(VAULT_KEY_ENV, "")
        if secret:
            return _fernet_from_secret(secret)
        if self.path is None:
            return Fernet(Fernet.generate_key())
        key_file = self.path.with_suffix(".key")
        if key_file.exists():
            return Fernet(key_file.read_bytes().strip())
        generated = Fernet.generate_key()
        _write_private(key_file, generated)
        logger.info("vault_key_generated", path=str(key_file))
        return Fernet(generated)

    def _load(self) -> dict[str, str]:
        if self.path is None or not self.path.exists():
            return {}
        try:
            data = json.loads(self.path.read_text())
        except json.JSONDecodeError as e:
            logger.error("vault_unreadable", path=str(self.path), error=str(e))
            return {}
        return {str(k): str(v) for k, v in data.items()}

    def _save(self) -> None:
        if self.path is None:
            return
        _write_private(self.path, json.dumps(self._tokens, sort_keys=True, indent=2).encode())

    def put(self, ref: str, value: str) -> None:
        with self._lock:
            self._tokens[ref] = self._fernet.encrypt(value.encode("utf-8")).decode("ascii")
            self._save()
        logger.debug("vault_put", ref=ref)

    def get(self, ref: str) -> str | None:
        token = self._tokens.get(ref)
        if token is None:
            return None
        try:
            return self._fernet.decrypt(token.encode("ascii")).decode("utf-8")
        except InvalidToken:
            logger.error("vault_decrypt_failed", ref=ref)
            return None

    def refresh(self, ref: str, value: str) -> None:
        """Replace a credential after the auth refresh path obtained a new one"""
        self.put(ref, value)
        logger.info("vault_refreshed", ref=ref)

    def remove(self, ref: str) -> bool:
        with self._lock:
            removed = self._tokens.pop(ref, None) is not None
            if removed:
                self._save()
        return removed

    def refs(self) -> list[str]:
        return sorted(self._tokens)

    def __contains__(self, ref: object) -> bool:
        return ref in self._tokens

    def values(self) -> Iterator[str]:
        """Decrypted values, for leak scans"""
        for ref in self.refs():
            value = self.get(ref)
            if value is not None:
                yield value

    def auth_headers(self, descriptor: AuthDescriptor) -> dict[str, str]:
        """
        Request headers carrying the credential a descriptor points at.

        Raises:
            AuthMissing: The descriptor needs a credential the vault lacks
        """
        if descriptor.kind == AuthKind.NONE:
            return {}
        value = self.get(descriptor.value_ref) if descriptor.value_ref else None
        if value is None or descriptor.location is None:
            raise AuthMissing(
                f"No credential for {descriptor.kind.value} auth", ref=descriptor.value_ref
            )
        if descriptor.kind == AuthKind.BEARER:
            return {descriptor.location: f"Bearer {value}"}
        if descriptor.kind == AuthKind.COOKIE:
            return {"Cookie": f"{descriptor.location}={value}"}
        return {descriptor.location: value}
