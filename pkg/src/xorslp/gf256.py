"""Arithmetic over GF(2^8) and the lowering of coding matrices to GF(2).

Elements are bytes, read as polynomials over GF(2) modulo x^8+x^4+x^3+x^2+1
(0x11D), the polynomial used by ISA-L.  The primitive element is 0x02.

Matrices over GF(2^8) and over GF(2) are plain ``numpy.uint8`` arrays; a
bitmatrix holds only 0/1 entries.
"""

import numpy as np

POLY = 0x11D
ALPHA = 0x02

__all__ = [
    "POLY", "ALPHA", "MUL_TABLE", "INV_TABLE", "SingularMatrixError",
    "mul_slow", "gf_add", "gf_mul", "gf_inv", "gf_pow", "gf_matmul",
    "identity", "vandermonde", "systematize", "rs_matrix", "invert",
    "tilde", "to_bitmatrix", "byte_to_bits", "bits_to_byte",
]


class SingularMatrixError(ValueError):
    pass


def mul_slow(a, b):
    """Shift-and-reduce multiplication; the reference for MUL_TABLE."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= POLY
    return r


def _build_tables():
    mul = np.zeros((256, 256), dtype=np.uint8)
    for a in range(256):
        for b in range(a, 256):
            mul[a, b] = mul[b, a] = mul_slow(a, b)
    inv = np.zeros(256, dtype=np.uint8)
    nz_a, nz_b = np.nonzero(mul == 1)
    inv[nz_a] = nz_b
    mul.setflags(write=False)
    inv.setflags(write=False)
    return mul, inv


# Built eagerly at import, so there is no lazy-initialisation race.
MUL_TABLE, INV_TABLE = _build_tables()


def gf_add(a, b):
    return a ^ b


def gf_mul(a, b):
    return int(MUL_TABLE[a, b])


def gf_inv(a):
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(INV_TABLE[a])


def gf_pow(a, e):
    r = 1
    for _ in range(e):
        r = int(MUL_TABLE[r, a])
    return r


def gf_matmul(a, b):
    """Matrix product over GF(2^8).

    ``b`` may be a matrix of data rows (shape ``(k, N)``), in which case this
    is the bytewise coding product used as an oracle for the XOR path.
    """
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    for k in range(a.shape[1]):
        out ^= MUL_TABLE[a[:, k][:, None], b[k][None, :]]
    return out


def identity(n):
    return np.eye(n, dtype=np.uint8)


def vandermonde(n, p):
    """(n+p) x n matrix whose row i (1-based) is (alpha^i)^j for j < n."""
    if n < 1 or p < 0 or n + p > 255:
        raise ValueError(f"invalid dimensions n={n}, p={p}")
    rows = []
    for i in range(1, n + p + 1):
        x = gf_pow(ALPHA, i)
        rows.append([gf_pow(x, j) for j in range(n)])
    return np.array(rows, dtype=np.uint8)


def systematize(v):
    """Reduce a tall matrix to standard form [I; M V^-1] using its top block."""
    v = np.asarray(v, dtype=np.uint8)
    n = v.shape[1]
    top_inv = invert(v[:n])
    return np.vstack([identity(n), gf_matmul(v[n:], top_inv)])


def rs_matrix(n, p):
    """The systematic RS(n, p) encoding matrix used by ISA-L.

    Identity stacked on the rows (1, g, g^2, ...) for g = alpha^0 .. alpha^(p-1).
    This is the matrix whose bitmatrix has 755 XORs for RS(10, 4); it is MDS
    for every n + p within the range exercised by the test-suite.
    """
    if n < 1 or p < 0 or n + p > 255:
        raise ValueError(f"invalid dimensions n={n}, p={p}")
    parity = []
    for i in range(p):
        g = gf_pow(ALPHA, i)
        parity.append([gf_pow(g, j) for j in range(n)])
    parity = np.array(parity, dtype=np.uint8).reshape(p, n)
    return np.vstack([identity(n), parity])


def invert(m):
    """Gauss-Jordan inverse over GF(2^8), pivoting on the first nonzero entry."""
    m = np.array(m, dtype=np.uint8)
    n = m.shape[0]
    if m.ndim != 2 or m.shape[1] != n:
        raise ValueError(f"cannot invert non-square matrix of shape {m.shape}")
    aug = np.hstack([m, identity(n)])
    for col in range(n):
        nz = np.nonzero(aug[col:, col])[0]
        if len(nz) == 0:
            raise SingularMatrixError("matrix is singular")
        piv = col + nz[0]
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = MUL_TABLE[INV_TABLE[aug[col, col]]][aug[col]]
        factors = aug[:, col].copy()
        factors[col] = 0
        aug ^= MUL_TABLE[factors[:, None], aug[col][None, :]]
    return aug[:, n:]


# Bit order: the most significant bit of a byte is row 0 of its bit vector.
def byte_to_bits(x):
    return np.array([(x >> (7 - i)) & 1 for i in range(8)], dtype=np.uint8)


def bits_to_byte(bits):
    x = 0
    for i, b in enumerate(bits):
        x |= (int(b) & 1) << (7 - i)
    return x


def _build_tilde():
    out = np.zeros((256, 8, 8), dtype=np.uint8)
    for x in range(256):
        for j in range(8):
            out[x, :, j] = byte_to_bits(mul_slow(x, 1 << (7 - j)))
    out.setflags(write=False)
    return out


_TILDE = _build_tilde()


def tilde(x):
    """8x8 bitmatrix of multiplication by ``x``."""
    return _TILDE[x].copy()


def to_bitmatrix(m):
    """Replace every cell of a GF(2^8) matrix by its 8x8 multiplication block."""
    m = np.asarray(m, dtype=np.uint8)
    r, c = m.shape
    blocks = _TILDE[m]  # (r, c, 8, 8)
    return blocks.transpose(0, 2, 1, 3).reshape(8 * r, 8 * c).copy()
