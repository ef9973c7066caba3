"""Keyed primitives used by the packet codec, the replay detector and link layer.

Everything here is a pure function of its arguments.  AES-128 provides the
block cipher; BLAKE2b provides key derivation.
"""

from __future__ import annotations

import enum
import hashlib
import hmac

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.cmac import CMAC

KEY_LEN = 16
MAC_LEN = 16
IV_LEN = 16
FS_PLAIN_LEN = 24
MAX_STREAM = 1 << 16

_ZERO_BLOCK = bytes(16)


class KdfLabel(enum.Enum):
    PRG = b"prg"
    PRP = b"prp"
    MAC = b"mac"
    # ENC and DEC share one key, otherwise decryption would not invert encryption.
    ENC = b"enc"


def kdf(material: bytes, label: KdfLabel, context: bytes = b"") -> bytes:
    """Derive a KEY_LEN key for one purpose from arbitrary key material."""
    if not material:
        raise ValueError("kdf material must be non-empty")
    h = hashlib.blake2b(digest_size=KEY_LEN, person=b"splitonion:" + label.value)
    h.update(material)
    h.update(context)
    return h.digest()


def _check_key(key: bytes) -> None:
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} octets, got {len(key)}")


def xor(a: bytes, b: bytes) -> bytes:
    """XOR two equal-length octet strings."""
    n = len(a)
    if n != len(b):
        raise ValueError("xor operands differ in length")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(n, "big")


def prg(key: bytes, length: int) -> bytes:
    """AES-CTR keystream under `key` from the all-zero counter block.

    prg(k, a) is a prefix of prg(k, b) whenever a <= b.
    """
    _check_key(key)
    if length < 0 or length > MAX_STREAM:
        raise ValueError(f"stream length {length} outside [0, {MAX_STREAM}]")
    if length == 0:
        return b""
    enc = Cipher(algorithms.AES(key), modes.CTR(_ZERO_BLOCK)).encryptor()
    return enc.update(bytes(length))


def _wide_check(block: bytes) -> int:
    n = len(block)
    if n not in (IV_LEN, FS_PLAIN_LEN):
        raise ValueError(f"PRP supports {IV_LEN} or {FS_PLAIN_LEN} octet blocks, got {n}")
    return n


def prp_encrypt(key: bytes, block: bytes) -> bytes:
    """Length-preserving keyed permutation over 16- or 24-octet blocks.

    The 24-octet width runs AES over [0:16], then [8:24], then [0:16] again,
    so every output octet depends on every input octet.
    """
    _check_key(key)
    n = _wide_check(block)
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    if n == IV_LEN:
        return enc.update(block)
    x = enc.update(block[:16]) + block[16:]
    x = x[:8] + enc.update(x[8:])
    return enc.update(x[:16]) + x[16:]


def prp_decrypt(key: bytes, block: bytes) -> bytes:
    _check_key(key)
    n = _wide_check(block)
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    if n == IV_LEN:
        return dec.update(block)
    x = dec.update(block[:16]) + block[16:]
    x = x[:8] + dec.update(x[8:])
    return dec.update(x[:16]) + x[16:]


def mac(key: bytes, msg: bytes) -> bytes:
    """AES-CMAC tag of MAC_LEN octets."""
    _check_key(key)
    c = CMAC(algorithms.AES(key))
    c.update(msg)
    return c.finalize()


def mac_verify(key: bytes, msg: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, msg), tag)


def stream_encrypt(key: bytes, nonce: bytes, msg: bytes) -> bytes:
    """AES-CTR with `nonce` as the initial counter block."""
    _check_key(key)
    if len(nonce) != IV_LEN:
        raise ValueError(f"nonce must be {IV_LEN} octets")
    if not msg:
        return b""
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(msg)


stream_decrypt = stream_encrypt
