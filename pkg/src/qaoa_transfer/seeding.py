"""Stable hashing and seed derivation (independent of PYTHONHASHSEED)."""
import hashlib


def stable_hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def derive_seed(*parts) -> int:
    """Deterministic 31-bit seed from any mix of strings and integers."""
    return stable_hash64("/".join(str(p) for p in parts)) & 0x7FFF_FFFF
