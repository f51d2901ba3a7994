"""Lightweight security primitives used by the SERMT protocol.

Elliptic-curve key pairs and Diffie-Hellman agreement, RC5 symmetric
encryption, SHA-1 (nested) HMACs, and one-way hash chains for broadcast
authentication.  Parameters are simulation-grade: the point is faithful
protocol behaviour, not real-world security margins.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import struct
from dataclasses import dataclass

TAG_LEN = 20        # SHA-1 HMAC tag length, fixed by the wire format
RC5_ROUNDS = 12
RC5_BLOCK = 8       # RC5-32 operates on two 32-bit words
RC5_KEY_LEN = 16    # reference configuration RC5-32/12/16

_P32 = 0xB7E15163   # RC5 key-schedule magic constants (32-bit word size)
_Q32 = 0x9E3779B9
_MASK32 = 0xFFFFFFFF


class InvalidKeyError(ValueError):
    """Peer public key rejected (off-curve point or degenerate result)."""


class CipherFormatError(ValueError):
    """Ciphertext framing or padding is malformed."""


class AuthenticationError(ValueError):
    """Integrity tag did not verify."""


class ChainExhaustedError(RuntimeError):
    """All keys of a hash chain have been released."""


def sha1_digest(data: bytes) -> bytes:
    return hashlib.sha1(data).digest()


# ---------------------------------------------------------------------------
# Elliptic-curve arithmetic (short Weierstrass; affine API, Jacobian ladder)

Point = tuple[int, int] | None  # None is the point at infinity


@dataclass(frozen=True)
class CurveParams:
    """y^2 = x^3 + a*x + b over GF(p), generator (gx, gy) of prime order n."""

    p: int
    a: int
    b: int
    gx: int
    gy: int
    n: int

    @property
    def g(self) -> Point:
        return (self.gx, self.gy)

    @property
    def coord_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def contains(self, point: Point) -> bool:
        if point is None:
            return True
        x, y = point
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0


# secp128r1: small enough to keep scalar multiplication cheap in pure Python.
SIM_CURVE = CurveParams(
    p=0xFFFFFFFDFFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFDFFFFFFFFFFFFFFFFFFFFFFFC,
    b=0xE87579C11079F43DD824993C2CEE5ED3,
    gx=0x161FF7528B899B2D0C28607CA52C5B86,
    gy=0xCF5AC8395BAFEB13C02DA292DDED7A83,
    n=0xFFFFFFFE0000000075A30D1B9038A115,
)


def point_add(p1: Point, p2: Point, curve: CurveParams) -> Point:
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    p = curve.p
    x1, y1 = p1
    x2, y2 = p2
    if x1 == x2:
        if (y1 + y2) % p == 0:
            return None
        s = (3 * x1 * x1 + curve.a) * pow(2 * y1, -1, p) % p
    else:
        s = (y2 - y1) * pow(x2 - x1, -1, p) % p
    x3 = (s * s - x1 - x2) % p
    y3 = (s * (x1 - x3) - y1) % p
    return (x3, y3)


# scalar_mult runs in Jacobian coordinates so the whole ladder costs a single
# modular inversion; point_add above stays affine as the independent oracle.

def _jac_double(q: tuple[int, int, int], p: int, a: int) -> tuple[int, int, int] | None:
    x1, y1, z1 = q
    if y1 == 0:
        return None
    ysq = y1 * y1 % p
    s = 4 * x1 * ysq % p
    z1sq = z1 * z1 % p
    m = (3 * x1 * x1 + a * z1sq * z1sq) % p
    x3 = (m * m - 2 * s) % p
    y3 = (m * (s - x3) - 8 * ysq * ysq) % p
    return (x3, y3, 2 * y1 * z1 % p)


def _jac_add_affine(q: tuple[int, int, int] | None, pt: tuple[int, int],
                    p: int, a: int) -> tuple[int, int, int] | None:
    if q is None:
        return (pt[0], pt[1], 1)
    x1, y1, z1 = q
    x2, y2 = pt
    z1sq = z1 * z1 % p
    u2 = x2 * z1sq % p
    s2 = y2 * z1 * z1sq % p
    if u2 == x1:
        if s2 == y1:
            return _jac_double(q, p, a)
        return None
    h = (u2 - x1) % p
    hh = h * h % p
    hhh = h * hh % p
    r = (s2 - y1) % p
    x3 = (r * r - hhh - 2 * x1 * hh) % p
    y3 = (r * (x1 * hh - x3) - y1 * hhh) % p
    return (x3, y3, z1 * h % p)


def scalar_mult(k: int, point: Point, curve: CurveParams) -> Point:
    if point is None or k % curve.n == 0:
        return None
    k %= curve.n
    p, a = curve.p, curve.a
    acc: tuple[int, int, int] | None = None
    for bit in bin(k)[2:]:
        if acc is not None:
            acc = _jac_double(acc, p, a)
        if bit == "1":
            acc = _jac_add_affine(acc, point, p, a)
    if acc is None:
        return None
    zinv = pow(acc[2], -1, p)
    zinv2 = zinv * zinv % p
    return (acc[0] * zinv2 % p, acc[1] * zinv2 * zinv % p)


def encode_point(point: Point, curve: CurveParams) -> bytes:
    if point is None:
        raise InvalidKeyError("cannot encode the point at infinity")
    w = curve.coord_bytes
    return point[0].to_bytes(w, "big") + point[1].to_bytes(w, "big")


def decode_point(data: bytes, curve: CurveParams) -> Point:
    w = curve.coord_bytes
    if len(data) != 2 * w:
        raise CipherFormatError(f"point encoding must be {2 * w} bytes, got {len(data)}")
    point = (int.from_bytes(data[:w], "big"), int.from_bytes(data[w:], "big"))
    if not curve.contains(point):
        raise InvalidKeyError("decoded point is not on the curve")
    return point


@dataclass(frozen=True)
class KeyPair:
    private: int
    public: Point


def generate_keypair(curve: CurveParams, rng) -> KeyPair:
    v = rng.randrange(1, curve.n)
    return KeyPair(v, scalar_mult(v, curve.g, curve))


def derive_shared_secret(private: int, peer_public: Point, curve: CurveParams) -> bytes:
    """ECDH: x-coordinate of private * peer_public, fixed-width big-endian."""
    if peer_public is None or not curve.contains(peer_public):
        raise InvalidKeyError("peer public key is not a valid curve point")
    shared = scalar_mult(private, peer_public, curve)
    if shared is None:
        raise InvalidKeyError("degenerate shared point")
    return shared[0].to_bytes(curve.coord_bytes, "big")


def cipher_key(secret: bytes) -> bytes:
    """Map a shared secret of any width onto an RC5-32/12/16 key."""
    return sha1_digest(secret)[:RC5_KEY_LEN]


# ---------------------------------------------------------------------------
# RC5-32/12/16

def _rotl32(x: int, s: int) -> int:
    s &= 31
    return ((x << s) | (x >> (32 - s))) & _MASK32


def _rotr32(x: int, s: int) -> int:
    s &= 31
    return ((x >> s) | (x << (32 - s))) & _MASK32


def rc5_key_schedule(key: bytes) -> list[int]:
    c = max(1, (len(key) + 3) // 4)
    lwords = [0] * c
    for i, byte in enumerate(key):  # little-endian byte packing
        lwords[i // 4] |= byte << (8 * (i % 4))
    t = 2 * (RC5_ROUNDS + 1)
    s = [_P32]
    for _ in range(t - 1):
        s.append((s[-1] + _Q32) & _MASK32)
    a = b = i = j = 0
    for _ in range(3 * max(t, c)):
        a = s[i] = _rotl32((s[i] + a + b) & _MASK32, 3)
        b = lwords[j] = _rotl32((lwords[j] + a + b) & _MASK32, a + b)
        i = (i + 1) % t
        j = (j + 1) % c
    return s


def rc5_encrypt_block(schedule: list[int], block: bytes) -> bytes:
    a, b = struct.unpack("<2L", block)
    a = (a + schedule[0]) & _MASK32
    b = (b + schedule[1]) & _MASK32
    for r in range(1, RC5_ROUNDS + 1):
        a = (_rotl32(a ^ b, b) + schedule[2 * r]) & _MASK32
        b = (_rotl32(b ^ a, a) + schedule[2 * r + 1]) & _MASK32
    return struct.pack("<2L", a, b)


def rc5_decrypt_block(schedule: list[int], block: bytes) -> bytes:
    a, b = struct.unpack("<2L", block)
    for r in range(RC5_ROUNDS, 0, -1):
        b = _rotr32((b - schedule[2 * r + 1]) & _MASK32, a) ^ a
        a = _rotr32((a - schedule[2 * r]) & _MASK32, b) ^ b
    b = (b - schedule[1]) & _MASK32
    a = (a - schedule[0]) & _MASK32
    return struct.pack("<2L", a, b)


def rc5_encrypt(key: bytes, plaintext: bytes) -> bytes:
    """Length-prefixed, zero-padded to the block size, ECB across blocks."""
    schedule = rc5_key_schedule(key)
    framed = struct.pack(">I", len(plaintext)) + plaintext
    framed += b"\x00" * (-len(framed) % RC5_BLOCK)
    return b"".join(
        rc5_encrypt_block(schedule, framed[i:i + RC5_BLOCK])
        for i in range(0, len(framed), RC5_BLOCK)
    )


def rc5_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if not ciphertext or len(ciphertext) % RC5_BLOCK:
        raise CipherFormatError(f"ciphertext length {len(ciphertext)} is not a positive block multiple")
    schedule = rc5_key_schedule(key)
    framed = b"".join(
        rc5_decrypt_block(schedule, ciphertext[i:i + RC5_BLOCK])
        for i in range(0, len(ciphertext), RC5_BLOCK)
    )
    (n,) = struct.unpack(">I", framed[:4])
    if 4 + n > len(framed) or any(framed[4 + n:]):
        raise CipherFormatError("bad padding (wrong key?)")
    return framed[4:4 + n]


# ---------------------------------------------------------------------------
# HMAC / nested HMAC

def hmac_tag(key: bytes, message: bytes) -> bytes:
    return _hmac.new(key, message, hashlib.sha1).digest()


def nested_hmac(outer_key: bytes, inner_key: bytes, message: bytes) -> bytes:
    """Tag = HMAC(outer_key, HMAC(inner_key, message)); outer key is the GBK."""
    return hmac_tag(outer_key, hmac_tag(inner_key, message))


def tags_equal(a: bytes, b: bytes) -> bool:
    return _hmac.compare_digest(a, b)


# ---------------------------------------------------------------------------
# One-way SHA-1 hash chains

class HashChain:
    """Chain K_1..K_n with sha1(K_i) = K_{i+1}; the anchor K_n is public.

    Keys are released in reverse generation order (K_{n-1} first) and each
    at most once; the anchor itself is never released as a proof key.
    """

    def __init__(self, seed: bytes, length: int):
        if length < 1:
            raise ValueError("chain length must be >= 1")
        keys = [sha1_digest(seed)]
        for _ in range(length - 1):
            keys.append(sha1_digest(keys[-1]))
        self._keys = keys            # keys[i] holds K_{i+1}
        self._cursor = length - 1    # 1-based index of the next key to release

    @property
    def anchor(self) -> bytes:
        return self._keys[-1]

    @property
    def exhausted(self) -> bool:
        return self._cursor < 1

    @property
    def remaining(self) -> int:
        return self._cursor

    def next_key(self) -> bytes:
        if self.exhausted:
            raise ChainExhaustedError("hash chain exhausted")
        key = self._keys[self._cursor - 1]
        self._cursor -= 1
        return key


def verify_chain_key(candidate: bytes, anchor: bytes, max_steps: int) -> tuple[bool, int]:
    """Accept iff repeated hashing of candidate reaches anchor within max_steps.

    Returns (accepted, steps_used); candidate == anchor accepts in 0 steps.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    current = candidate
    for steps in range(max_steps + 1):
        if current == anchor:
            return True, steps
        current = sha1_digest(current)
    return False, 0


class ChainAnchorState:
    """Receiver-side chain head: accepts only strictly-earlier keys, once.

    Advancing the head to each accepted key rejects replays — a key at or
    after the head can never hash to it in one or more steps.
    """

    def __init__(self, anchor: bytes, max_steps: int = 64):
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.head = anchor
        self.max_steps = max_steps

    def accept(self, candidate: bytes) -> bool:
        current = sha1_digest(candidate)
        for _ in range(self.max_steps):
            if current == self.head:
                self.head = candidate
                return True
            current = sha1_digest(current)
        return False


# ---------------------------------------------------------------------------
# Hybrid public-key encryption: ephemeral ECDH + RC5 + HMAC

def ecc_encrypt(recipient_public: Point, plaintext: bytes, curve: CurveParams, rng) -> bytes:
    """ephemeral_public || rc5(plaintext) || hmac — only the private-key holder recovers it."""
    ephemeral = generate_keypair(curve, rng)
    key = cipher_key(derive_shared_secret(ephemeral.private, recipient_public, curve))
    body = rc5_encrypt(key, plaintext)
    return encode_point(ephemeral.public, curve) + body + hmac_tag(key, body)


def ecc_decrypt(recipient_private: int, ciphertext: bytes, curve: CurveParams) -> bytes:
    header = 2 * curve.coord_bytes
    if len(ciphertext) < header + RC5_BLOCK + TAG_LEN:
        raise CipherFormatError("ciphertext too short for header + block + tag")
    ephemeral_public = decode_point(ciphertext[:header], curve)
    body = ciphertext[header:-TAG_LEN]
    tag = ciphertext[-TAG_LEN:]
    key = cipher_key(derive_shared_secret(recipient_private, ephemeral_public, curve))
    if not tags_equal(hmac_tag(key, body), tag):
        raise AuthenticationError("ciphertext tag mismatch")
    return rc5_decrypt(key, body)
