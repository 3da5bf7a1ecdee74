"""Account onboarding, admin review, sessions, and the email outbox.

Passwords are stored only as salted scrypt digests. Admin decisions are
final and queue exactly one email each; delivery is an outbox (persisted
queue plus an optional one-file-per-email dev sink), never direct SMTP.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import secrets
import threading
from dataclasses import dataclass
from typing import Optional

from .clock import MonotonicStamper
from .config import SESSION_TTL_S
from .domain import Approval, Role, UserAccount
from .errors import ServiceError
from .store import DocumentStore

logger = logging.getLogger(__name__)

_EMAIL_RE = re.compile(r"^[^@\s]+@[^@\s]+\.[^@\s]+$")

USERS = "users"
SESSIONS = "sessions"
OUTBOX = "outbox"


class DuplicateIdentity(ServiceError):
    code = "duplicate_identity"


class WeakPassword(ServiceError):
    code = "weak_password"


class MalformedEmail(ServiceError):
    code = "malformed_email"


class EmptyName(ServiceError):
    code = "empty_name"


class MissingField(ServiceError):
    code = "missing_field"


class UnknownAccount(ServiceError):
    code = "unknown_account"


class NotPending(ServiceError):
    code = "not_pending"


class InvalidCredentials(ServiceError):
    code = "invalid_credentials"


class NotYetApproved(ServiceError):
    code = "not_yet_approved"


@dataclass(frozen=True)
class Session:
    token: str
    account_id: str
    role: Role
    expires_at: float

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "account_id": self.account_id,
            "role": self.role.value,
            "expires_at": self.expires_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "Session":
        return Session(d["token"], d["account_id"], Role(d["role"]), d["expires_at"])


@dataclass(frozen=True)
class OutboxEmail:
    to: str
    subject: str
    body: str
    kind: str  # "Accepted" | "Rejected"
    queued_at: float

    def to_dict(self) -> dict:
        return {
            "to": self.to,
            "subject": self.subject,
            "body": self.body,
            "kind": self.kind,
            "queued_at": self.queued_at,
        }


def validate_password(pw: str) -> None:
    """Minimum six characters of any kind; that is the whole rule."""
    if len(pw) < 6:
        raise WeakPassword("password must be at least 6 characters")


def hash_password(pw: str, scrypt_n: int = 2**14) -> str:
    salt = secrets.token_bytes(16)
    digest = hashlib.scrypt(pw.encode(), salt=salt, n=scrypt_n, r=8, p=1)
    return f"scrypt:{scrypt_n}${salt.hex()}${digest.hex()}"


def verify_password(pw: str, stored: str) -> bool:
    try:
        scheme, salt_hex, digest_hex = stored.split("$")
        n = int(scheme.split(":")[1])
        digest = hashlib.scrypt(pw.encode(), salt=bytes.fromhex(salt_hex), n=n, r=8, p=1)
        return secrets.compare_digest(digest.hex(), digest_hex)
    except (ValueError, IndexError):
        return False


class AccountService:
    def __init__(
        self,
        store: DocumentStore,
        stamper: MonotonicStamper,
        outbox_dir: Optional[str] = None,
        session_ttl_s: float = SESSION_TTL_S,
        scrypt_n: int = 2**14,
    ):
        self._store = store
        self._stamper = stamper
        self._outbox_dir = outbox_dir
        self._session_ttl_s = session_ttl_s
        self._scrypt_n = scrypt_n
        self._lock = threading.RLock()

    def hash(self, password: str) -> str:
        """Digest a password at this service's configured scrypt cost."""
        return hash_password(password, self._scrypt_n)

    # -- registration -------------------------------------------------------

    def generate_username(self, first: str, last: str) -> str:
        """first.last, lowercased; namesakes get -2, -3, ... suffixes."""
        first, last = first.strip(), last.strip()
        if not first or not last:
            raise EmptyName("first and last name are required")
        base = f"{first.lower()}.{last.lower()}"
        with self._lock:
            taken = {doc["username"] for _, doc in self._store.scan(USERS)}
            if base not in taken:
                return base
            n = 2
            while f"{base}-{n}" in taken:
                n += 1
            return f"{base}-{n}"

    def register(
        self,
        university_id: str,
        email: str,
        first_name: str,
        last_name: str,
        phone: str,
        password: str,
    ) -> UserAccount:
        for name, value in (
            ("university_id", university_id),
            ("email", email),
            ("first_name", first_name),
            ("last_name", last_name),
            ("phone", phone),
        ):
            if not value or not value.strip():
                raise MissingField(f"{name} is required", field=name)
        if not _EMAIL_RE.match(email):
            raise MalformedEmail("email address is not valid", field="email")
        validate_password(password)
        with self._lock:
            if self._store.get(USERS, university_id) is not None:
                raise DuplicateIdentity("university id already registered", field="university_id")
            if any(doc["email"] == email for _, doc in self._store.scan(USERS)):
                raise DuplicateIdentity("email already registered", field="email")
            account = UserAccount(
                university_id=university_id,
                email=email,
                first_name=first_name.strip(),
                last_name=last_name.strip(),
                phone=phone,
                username=self.generate_username(first_name, last_name),
                password_digest=hash_password(password, self._scrypt_n),
                approval=Approval.PENDING,
                role=Role.RIDER,
            )
            if not self._store.cas(USERS, university_id, 0, account.to_dict()):
                raise DuplicateIdentity("university id already registered", field="university_id")
        logger.info("registered account %s (pending review)", university_id)
        return account

    def create_account(self, account: UserAccount) -> UserAccount:
        """Direct provisioning path for admin bootstrap and driver accounts."""
        with self._lock:
            if not self._store.cas(USERS, account.university_id, 0, account.to_dict()):
                raise DuplicateIdentity("account id already exists", field="university_id")
        return account

    # -- review -------------------------------------------------------------

    def pending_accounts(self) -> list[UserAccount]:
        return [
            UserAccount.from_dict(doc)
            for _, doc in self._store.scan(USERS)
            if doc["approval"] == Approval.PENDING.value
        ]

    def admin_review(self, account_id: str, accept: bool) -> tuple[UserAccount, OutboxEmail]:
        """Decide a pending registration; exactly one email per decision."""
        found = self._store.get(USERS, account_id)
        if found is None:
            raise UnknownAccount(f"no account {account_id!r}")
        doc, version = found
        account = UserAccount.from_dict(doc)
        if account.approval is not Approval.PENDING:
            raise NotPending("account was already reviewed")
        decided = UserAccount.from_dict(
            {**doc, "approval": (Approval.APPROVED if accept else Approval.REJECTED).value}
        )
        # CAS makes concurrent reviews resolve to one state change + one email
        if not self._store.cas(USERS, account_id, version, decided.to_dict()):
            raise NotPending("account was already reviewed")
        email = self._queue_email(decided, accept)
        logger.info("account %s %s", account_id, decided.approval.value.lower())
        return decided, email

    def _queue_email(self, account: UserAccount, accepted: bool) -> OutboxEmail:
        if accepted:
            email = OutboxEmail(
                to=account.email,
                subject="Registration approved",
                body=(
                    f"Hello {account.first_name},\n\n"
                    "Your registration was approved. You can now log in with "
                    f"username '{account.username}' and your chosen password.\n"
                ),
                kind="Accepted",
                queued_at=self._stamper.stamp(),
            )
        else:
            email = OutboxEmail(
                to=account.email,
                subject="Registration rejected",
                body=(
                    f"Hello {account.first_name},\n\n"
                    "Your credentials could not be validated, so your registration "
                    "was rejected. Please try to register again.\n"
                ),
                kind="Rejected",
                queued_at=self._stamper.stamp(),
            )
        key = f"{email.queued_at:.6f}-{email.to}"
        self._store.put(OUTBOX, key, email.to_dict())
        if self._outbox_dir:
            self._write_sink_file(key, email)
        return email

    def _write_sink_file(self, key: str, email: OutboxEmail) -> None:
        os.makedirs(self._outbox_dir, exist_ok=True)
        path = os.path.join(self._outbox_dir, f"{key}.eml")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"To: {email.to}\n")
            fh.write(f"Subject: {email.subject}\n")
            fh.write("\n")
            fh.write(email.body)

    def outbox_emails(self) -> list[dict]:
        return [doc for _, doc in self._store.scan(OUTBOX)]

    # -- login / sessions ----------------------------------------------------

    def login(self, username: str, password: str) -> Session:
        """Issue a session. Failure reasons are indistinguishable except the
        user-visible pending state."""
        account = self._find_by_username(username)
        if account is None or not verify_password(password, account.password_digest):
            raise InvalidCredentials("unknown username or wrong password")
        if account.approval is Approval.PENDING:
            raise NotYetApproved("registration is still pending review")
        if account.approval is Approval.REJECTED:
            raise InvalidCredentials("unknown username or wrong password")
        now = self._stamper.stamp()
        session = Session(
            token=secrets.token_urlsafe(32),
            account_id=account.university_id,
            role=account.role,
            expires_at=now + self._session_ttl_s,
        )
        self._store.put(SESSIONS, session.token, session.to_dict())
        logger.info("login for account %s", account.university_id)
        return session

    def _find_by_username(self, username: str) -> Optional[UserAccount]:
        for _, doc in self._store.scan(USERS):
            if doc["username"] == username:
                return UserAccount.from_dict(doc)
        return None

    def get_account(self, account_id: str) -> Optional[UserAccount]:
        found = self._store.get(USERS, account_id)
        return UserAccount.from_dict(found[0]) if found else None

    def authenticate(self, token: str) -> Optional[Session]:
        """Resolve a bearer token; expired sessions authenticate nothing.

        Sessions renew on use once past half their lifetime.
        """
        found = self._store.get(SESSIONS, token)
        if found is None:
            return None
        session = Session.from_dict(found[0])
        now = self._stamper.stamp()
        if now >= session.expires_at:
            self._store.delete(SESSIONS, token)
            return None
        if session.expires_at - now < self._session_ttl_s / 2:
            session = Session(
                session.token, session.account_id, session.role, now + self._session_ttl_s
            )
            self._store.put(SESSIONS, token, session.to_dict())
        return session
