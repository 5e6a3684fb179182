"""
Tests for the local credential vault.
"""

import stat
from pathlib import Path

import pytest
from cryptography.fernet import Fernet

from routegraph.errors import AuthMissing
from routegraph.models import AuthDescriptor, AuthKind
from routegraph.vault import VAULT_KEY_ENV, CredentialVault


def test_values_are_encrypted_on_disk(tmp_path: Path) -> None:
    """Test the vault file holds ciphertext and a private key file."""
    path = tmp_path / "vault.json"
    vault = CredentialVault(path)
    vault.put("a.example:bearer:authorization", "s3cret-token")

    assert "s3cret-token" not in path.read_text()
    assert stat.S_IMODE(path.stat().st_mode) == 0o600
    assert stat.S_IMODE(path.with_suffix(".key").stat().st_mode) == 0o600

    reopened = CredentialVault(path)
    assert reopened.get("a.example:bearer:authorization") == "s3cret-token"
    assert reopened.refs() == ["a.example:bearer:authorization"]


def test_key_from_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Test a passphrase in the environment replaces the key file."""
    monkeypatch.setenv(VAULT_KEY_ENV, "correct horse battery staple")
    path = tmp_path / "vault.json"
    CredentialVault(path).put("ref", "value")

    assert not path.with_suffix(".key").exists()
    assert CredentialVault(path).get("ref") == "value"


@pytest.mark.parametrize(
    "key",
    [
        Fernet.generate_key().decode(),
        "a passphrase that is exactly forty-four char",
    ],
)
def test_fernet_keys_and_passphrases(tmp_path: Path, key: str) -> None:
    """Test a real Fernet key is used as is and any other secret is stretched."""
    assert len(key) == 44
    path = tmp_path / "vault.json"
    CredentialVault(path, key=key).put("ref", "value")
    assert CredentialVault(path, key=key).get("ref") == "value"


def test_wrong_key_reads_nothing(tmp_path: Path) -> None:
    """Test a vault opened with another key cannot decrypt."""
    path = tmp_path / "vault.json"
    CredentialVault(path, key="first").put("ref", "value")
    assert CredentialVault(path, key="second").get("ref") is None


def test_auth_headers_by_kind() -> None:
    """Test each auth kind renders its own request header."""
    vault = CredentialVault()
    vault.put("b", "tok")
    vault.put("k", "key-1")
    vault.put("c", "sid-9")

    bearer = AuthDescriptor(kind=AuthKind.BEARER, location="Authorization", value_ref="b")
    api_key = AuthDescriptor(kind=AuthKind.API_KEY_HEADER, location="X-Api-Key", value_ref="k")
    cookie = AuthDescriptor(kind=AuthKind.COOKIE, location="sessionid", value_ref="c")

    assert vault.auth_headers(bearer) == {"Authorization": "Bearer tok"}
    assert vault.auth_headers(api_key) == {"X-Api-Key": "key-1"}
    assert vault.auth_headers(cookie) == {"Cookie": "sessionid=sid-9"}
    assert vault.auth_headers(AuthDescriptor()) == {}


def test_missing_credential_raises() -> None:
    """Test a descriptor pointing at an absent key raises AuthMissing."""
    descriptor = AuthDescriptor(kind=AuthKind.BEARER, location="Authorization", value_ref="gone")
    with pytest.raises(AuthMissing):
        CredentialVault().auth_headers(descriptor)


def test_refresh_and_remove() -> None:
    """Test refresh replaces a value and remove drops it."""
    vault = CredentialVault()
    vault.put("ref", "old")
    vault.refresh("ref", "new")
    assert vault.get("ref") == "new"
    assert list(vault.values()) == ["new"]
    assert vault.remove("ref")
    assert "ref" not in vault
    assert not vault.remove("ref")
