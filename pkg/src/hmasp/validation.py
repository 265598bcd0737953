"""Deterministic validators and parsers for the payment workflows.

Everything here is pattern-based and pure: card-field extraction, the
Luhn checksum gate, expiry/CVV/OTP shape checks, amount parsing, and the
simulated 3-D Secure authorization. No decision backend is ever consulted
for these values; workflows call these functions directly so the critical
payment data cannot be tampered with or hallucinated.

Simulation rule for 3DS: an OTP is approved iff the sum of its six digits
is divisible by 10. The auth code is derived by hashing the checkout
intent and card id, so identical inputs always authorize identically.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from datetime import date

from hmasp.errors import (
    ExpiredCard,
    InvalidAmount,
    InvalidCvv,
    InvalidLength,
    InvalidOtpShape,
    LuhnFailed,
    MissingField,
    NonDigit,
)

PAN_LENGTH = 16


def luhn_check(pan: str) -> bool:
    """Mod-10 checksum over a 16-digit card number.

    Doubles every second digit from the right, subtracts 9 from doubles
    above 9, and accepts iff the total is divisible by 10. The caller is
    responsible for shape; violations raise rather than return False.
    """
    if len(pan) != PAN_LENGTH:
        raise InvalidLength(f"pan must be {PAN_LENGTH} digits, got {len(pan)}")
    if not pan.isascii() or not pan.isdigit():
        raise NonDigit("pan must contain ASCII digits only")
    total = 0
    for i, ch in enumerate(reversed(pan)):
        d = int(ch)
        if i % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


def luhn_complete(prefix15: str) -> str:
    """Append the unique check digit that makes a 15-digit prefix valid."""
    if len(prefix15) != PAN_LENGTH - 1 or not prefix15.isdigit():
        raise InvalidLength("prefix must be 15 digits")
    for d in "0123456789":
        if luhn_check(prefix15 + d):
            return prefix15 + d
    raise AssertionError("unreachable: some check digit always validates")


def mask_pan(pan: str) -> str:
    """Render a PAN as '**** **** **** dddd', revealing exactly 4 digits."""
    if len(pan) != PAN_LENGTH or not pan.isdigit():
        raise InvalidLength(f"pan must be {PAN_LENGTH} digits")
    return "**** **** **** " + pan[-4:]


def scrub_pans(text: str) -> str:
    """Replace any Luhn-valid 16-digit run (separators allowed) with its
    masked form. Applied to every message before it enters a state log so
    raw card numbers can never sit in conversational state."""

    def _mask(m: re.Match) -> str:
        digits = re.sub(r"[ -]", "", m.group(0))
        if len(digits) == PAN_LENGTH and luhn_check(digits):
            return mask_pan(digits)
        return m.group(0)

    return re.sub(r"(?<![\d])\d(?:[ -]?\d){15}(?![\d])", _mask, text)


@dataclass(frozen=True)
class CardDetails:
    """Full card data as validated from user input.

    Lives only in transit between validation and the vault; never written
    to a state partition or serialized. ``last4`` is derived from the PAN.
    """

    pan: str
    expiry_month: int
    expiry_year: int  # four-digit year
    cvv: str
    holder_name: str = ""

    @property
    def last4(self) -> str:
        return self.pan[-4:]

    @property
    def expiry(self) -> str:
        return f"{self.expiry_month:02d}/{self.expiry_year % 100:02d}"


@dataclass(frozen=True)
class MaskedCard:
    card_id: str
    masked_pan: str
    holder_name: str = ""


@dataclass(frozen=True)
class CheckoutIntent:
    amount_minor: int
    currency: str
    merchant_ref: str


@dataclass(frozen=True)
class AuthResult:
    approved: bool
    auth_code: str | None = None
    reason: str | None = None


_EXPIRY_RE = re.compile(r"\b(\d{1,2})\s*/\s*(\d{2})\b")
_HOLDER_RE = re.compile(
    r"(?:name|holder)\s*:?\s+([A-Za-z][A-Za-z .'\-]*)", re.IGNORECASE
)


def _digit_groups(text: str) -> list[str]:
    """Contiguous digit runs, with card-style chains of four-digit groups
    joined across single space/dash separators, so '4242 4242 4242 4242'
    reads as one 16-digit group while '4242424242424242 123' stays two."""
    matches = list(re.finditer(r"\d+", text))
    groups: list[str] = []
    i = 0
    while i < len(matches):
        combined = matches[i].group(0)
        end = matches[i].end()
        j = i + 1
        while (
            j < len(matches)
            and len(matches[i].group(0)) == 4
            and len(matches[j].group(0)) == 4
            and matches[j].start() == end + 1
            and text[end] in " -"
        ):
            combined += matches[j].group(0)
            end = matches[j].end()
            j += 1
        groups.append(combined)
        i = j
    return groups


def validate_card_input(raw: str, clock: date) -> CardDetails:
    """Extract and validate card fields from a natural-language reply.

    Extraction is rule-based: the longest digit run (4+ digits, separators
    stripped) is the PAN candidate, MM/YY is the expiry, a standalone
    3-digit run is the CVV, and an optional 'name ...' phrase is the
    holder. Checks run shape-first, then Luhn, then expiry-in-future, and
    the first failure wins.
    """
    expiry_match = _EXPIRY_RE.search(raw)
    without_expiry = raw
    if expiry_match:
        without_expiry = raw[: expiry_match.start()] + " " + raw[expiry_match.end() :]

    runs = _digit_groups(without_expiry)
    pan_candidates = [r for r in runs if len(r) >= 4]
    if not pan_candidates:
        raise MissingField("pan")
    pan = max(pan_candidates, key=len)
    if len(pan) != PAN_LENGTH:
        raise InvalidLength(f"pan must be {PAN_LENGTH} digits, got {len(pan)}")

    if expiry_match is None:
        raise MissingField("expiry")
    month, yy = int(expiry_match.group(1)), int(expiry_match.group(2))
    if not 1 <= month <= 12:
        raise MissingField("expiry")

    rest = [r for r in runs if r != pan]
    cvv_runs = [r for r in rest if len(r) == 3]
    if not cvv_runs:
        if rest:
            raise InvalidCvv(f"cvv must be 3 digits, got {len(rest[0])}")
        raise MissingField("cvv")
    cvv = cvv_runs[0]

    if not luhn_check(pan):
        raise LuhnFailed("card number failed the Luhn checksum")

    year = 2000 + yy
    if (year, month) < (clock.year, clock.month):
        raise ExpiredCard(f"card expired {month:02d}/{yy:02d}")

    holder = ""
    holder_match = _HOLDER_RE.search(raw)
    if holder_match:
        holder = holder_match.group(1).strip()

    return CardDetails(
        pan=pan, expiry_month=month, expiry_year=year, cvv=cvv, holder_name=holder
    )


_AMOUNT_RE = re.compile(r"\$?(\d+)(?:\.(\d{1,2}))?")


def parse_amount(text: str) -> tuple[int, str] | None:
    """Find an amount like '$25.00' or '12.5' and return (minor units,
    currency). Returns None when the text carries no amount. Bare integers
    without a '$' or decimal point are ignored (they are order numbers,
    indices, and the like)."""
    for m in _AMOUNT_RE.finditer(text):
        dollars, cents = m.group(1), m.group(2)
        dollar_sign = m.group(0).startswith("$")
        if not dollar_sign and cents is None:
            continue
        minor = int(dollars) * 100
        if cents is not None:
            minor += int(cents) if len(cents) == 2 else int(cents) * 10
        return minor, "USD"
    return None


def format_amount(minor: int) -> str:
    return f"{minor // 100}.{minor % 100:02d}"


_MERCHANT_RE = re.compile(r"order\s*[#:]?\s*(\w+)", re.IGNORECASE)


def parse_merchant_ref(text: str) -> str:
    m = _MERCHANT_RE.search(text)
    return f"order-{m.group(1)}" if m else "order-na"


_ORDINALS = {
    "first": 1, "second": 2, "third": 3, "fourth": 4, "fifth": 5,
    "sixth": 6, "seventh": 7, "eighth": 8, "ninth": 9, "tenth": 10,
}


def parse_choice_index(text: str) -> int | None:
    """Read a 1-based card choice from a reply: a digit or an ordinal word
    (one of first..tenth)."""
    lowered = text.lower()
    for word, idx in _ORDINALS.items():
        if re.search(rf"\b{word}\b", lowered):
            return idx
    m = re.search(r"\b(\d{1,2})\b", lowered)
    if m:
        idx = int(m.group(1))
        if idx >= 1:
            return idx
    return None


_OTP_RE = re.compile(r"\b(\d{6})\b")


def extract_otp(text: str) -> str:
    m = _OTP_RE.search(text)
    if not m:
        raise InvalidOtpShape("expected a 6-digit code")
    return m.group(1)


def authorize_3ds(intent: CheckoutIntent, card_id: str, otp: str) -> AuthResult:
    """Simulated 3-D Secure challenge.

    Approval rule: the OTP's digit sum must be divisible by 10. On
    approval the auth code is a stable hash of the intent and card, so
    replaying the same checkout yields the same code.
    """
    if len(otp) != 6 or not otp.isdigit():
        raise InvalidOtpShape("otp must be exactly 6 digits")
    if sum(int(d) for d in otp) % 10 != 0:
        return AuthResult(approved=False, reason="3ds_challenge_failed")
    seed = f"{intent.amount_minor}|{intent.currency}|{intent.merchant_ref}|{card_id}"
    code = hashlib.sha256(seed.encode("utf-8")).hexdigest()[:12].upper()
    return AuthResult(approved=True, auth_code=f"AUTH-{code}")


def parse_amount_reply(text: str) -> tuple[int, str]:
    """Amount parsing for an interrupt reply, where an amount is required."""
    parsed = parse_amount(text)
    if parsed is None:
        raise InvalidAmount("no amount found; expected e.g. $25.00")
    return parsed
