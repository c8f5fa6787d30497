"""Counter-based random streams and the variate samplers built on them.

Every variate is a pure function of ``(master_seed, stream_id, draw index)``.
The generator is Philox4x32-10: the 128-bit counter holds the block index in
its low 64 bits and the stream id in its high 64 bits, and the 64-bit key is
the master seed.  A stream is a small ``uint64`` state vector so the numba
kernels elsewhere in the package can own one per replicate.

State layout (``STATE_SIZE`` words)::

    [0] master seed (key)
    [1] stream id
    [2] next block index
    [3] buffered 64-bit word
    [4] 1 if the buffer holds an unused word
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

STATE_SIZE = 5

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH11 = np.uint64(11)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_TWO_M53 = 1.0 / 9007199254740992.0

UINT64_MAX = (1 << 64) - 1


@nb.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds over a 4x32-bit counter with a 2x32-bit key."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = (p1 >> _SH32) ^ c1 ^ k0
        n1 = p1 & _MASK32
        n2 = (p0 >> _SH32) ^ c3 ^ k1
        n3 = p0 & _MASK32
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def init_state(state, master_seed, stream_id):
    state[0] = master_seed
    state[1] = stream_id
    state[2] = _ZERO
    state[3] = _ZERO
    state[4] = _ZERO


@nb.njit(cache=True)
def new_state(master_seed, stream_id):
    state = np.empty(STATE_SIZE, dtype=np.uint64)
    init_state(state, np.uint64(master_seed), np.uint64(stream_id))
    return state


@nb.njit(cache=True)
def next_u64(state):
    if state[4] != _ZERO:
        state[4] = _ZERO
        return state[3]
    ctr = state[2]
    sid = state[1]
    key = state[0]
    x0, x1, x2, x3 = philox4x32(
        ctr & _MASK32, ctr >> _SH32, sid & _MASK32, sid >> _SH32,
        key & _MASK32, key >> _SH32,
    )
    state[2] = ctr + _ONE
    state[3] = (x2 << _SH32) | x3
    state[4] = _ONE
    return (x0 << _SH32) | x1


@nb.njit(cache=True)
def next_double(state):
    """Uniform on [0, 1) with 53 random bits."""
    return float(np.int64(next_u64(state) >> _SH11)) * _TWO_M53


@nb.njit(cache=True)
def next_open(state):
    """Uniform on the open interval (0, 1)."""
    return (float(np.int64(next_u64(state) >> _SH11)) + 0.5) * _TWO_M53


def _ziggurat_tables(blocks: int = 128, r: float = 3.442619855899, v: float = 9.91256303526217e-3):
    """Layer edges and acceptance ratios of a 128-block normal ziggurat."""
    x = np.zeros(blocks + 1)
    f = math.exp(-0.5 * r * r)
    x[0] = v / f
    x[1] = r
    for i in range(2, blocks):
        x[i] = math.sqrt(-2.0 * math.log(v / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    ratio = x[1:] / x[:-1]
    return x, ratio


_ZIG_X, _ZIG_R = _ziggurat_tables()
_ZIG_TAIL = 3.442619855899
_MASK7 = np.uint64(127)


@nb.njit(cache=True)
def std_normal(state):
    # ziggurat: block index from the low 7 bits, abscissa from the top 53
    while True:
        w = next_u64(state)
        i = int(w & _MASK7)
        u = 2.0 * (float(np.int64(w >> _SH11)) * _TWO_M53) - 1.0
        if abs(u) < _ZIG_R[i]:
            return u * _ZIG_X[i]
        if i == 0:
            while True:
                xt = math.log(next_open(state)) / _ZIG_TAIL
                yt = math.log(next_open(state))
                if -2.0 * yt >= xt * xt:
                    break
            return xt - _ZIG_TAIL if u < 0.0 else _ZIG_TAIL - xt
        x = u * _ZIG_X[i]
        f0 = math.exp(-0.5 * (_ZIG_X[i] * _ZIG_X[i] - x * x))
        f1 = math.exp(-0.5 * (_ZIG_X[i + 1] * _ZIG_X[i + 1] - x * x))
        if f1 + next_double(state) * (f0 - f1) < 1.0:
            return x


@nb.njit(cache=True)
def std_exponential(state):
    return -math.log(next_open(state))


@nb.njit(cache=True)
def std_gamma(state, shape):
    """Gamma(shape, 1) by Marsaglia and Tsang, boosted for shape < 1."""
    if shape < 1.0:
        g = std_gamma(state, shape + 1.0)
        return g * math.exp(math.log(next_open(state)) / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = std_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = next_open(state)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


@nb.njit(cache=True)
def gamma(state, shape, scale):
    return scale * std_gamma(state, shape)


@nb.njit(cache=True)
def beta(state, a, b):
    """Beta(a, b) as g1 / (g1 + g2) with independent unit-scale gammas."""
    g1 = std_gamma(state, a)
    g2 = std_gamma(state, b)
    s = g1 + g2
    if s == 0.0:
        # both gammas underflowed (only possible for shapes far below 1)
        return 1.0 if next_double(state) * (a + b) < a else 0.0
    return g1 / s


@nb.njit(cache=True)
def _binomial_inversion(state, n, p):
    q = 1.0 - p
    qn = math.exp(n * math.log(q))
    mean = n * p
    bound = min(float(n), mean + 10.0 * math.sqrt(mean * q + 1.0))
    x = 0
    px = qn
    u = next_double(state)
    while u > px:
        x += 1
        if x > bound:
            x = 0
            px = qn
            u = next_double(state)
        else:
            u -= px
            px = ((n - x + 1) * p * px) / (x * q)
    return x


@nb.njit(cache=True)
def _binomial_btpe(state, n, p):
    # Kachitvichyanukul & Schmeiser BTPE, p <= 1/2.
    r = p
    q = 1.0 - r
    fm = n * r + r
    m = int(math.floor(fm))
    nrq = n * r * q
    p1 = math.floor(2.195 * math.sqrt(nrq) - 4.6 * q) + 0.5
    xm = m + 0.5
    xl = xm - p1
    xr = xm + p1
    c = 0.134 + 20.5 / (15.3 + m)
    a = (fm - xl) / (fm - xl * r)
    laml = a * (1.0 + a / 2.0)
    a = (xr - fm) / (xr * q)
    lamr = a * (1.0 + a / 2.0)
    p2 = p1 * (1.0 + 2.0 * c)
    p3 = p2 + c / laml
    p4 = p3 + c / lamr
    while True:
        u = next_double(state) * p4
        v = next_double(state)
        if u <= p1:
            return int(math.floor(xm - p1 * v + u))
        if u <= p2:
            x = xl + (u - p1) / c
            v = v * c + 1.0 - abs(m - x + 0.5) / p1
            if v > 1.0:
                continue
            y = int(math.floor(x))
        elif u <= p3:
            y = int(math.floor(xl + math.log(v) / laml))
            if y < 0:
                continue
            v = v * (u - p2) * laml
        else:
            y = int(math.floor(xr - math.log(v) / lamr))
            if y > n:
                continue
            v = v * (u - p3) * lamr
        k = abs(y - m)
        if k <= 20 or k >= nrq / 2.0 - 1.0:
            s = r / q
            aa = s * (n + 1)
            f = 1.0
            if m < y:
                for i in range(m + 1, y + 1):
                    f *= aa / i - s
            elif m > y:
                for i in range(y + 1, m + 1):
                    f /= aa / i - s
            if v <= f:
                return y
            continue
        rho = (k / nrq) * ((k * (k / 3.0 + 0.625) + 0.1666666666666) / nrq + 0.5)
        t = -k * k / (2.0 * nrq)
        aln = math.log(v)
        if aln < t - rho:
            return y
        if aln > t + rho:
            continue
        x1 = y + 1.0
        f1 = m + 1.0
        z = n + 1.0 - m
        w = n - y + 1.0
        x2 = x1 * x1
        f2 = f1 * f1
        z2 = z * z
        w2 = w * w
        bound = (
            xm * math.log(f1 / x1)
            + (n - m + 0.5) * math.log(z / w)
            + (y - m) * math.log(w * r / (x1 * q))
            + (13680.0 - (462.0 - (132.0 - (99.0 - 140.0 / f2) / f2) / f2) / f2) / f1 / 166320.0
            + (13680.0 - (462.0 - (132.0 - (99.0 - 140.0 / z2) / z2) / z2) / z2) / z / 166320.0
            + (13680.0 - (462.0 - (132.0 - (99.0 - 140.0 / x2) / x2) / x2) / x2) / x1 / 166320.0
            + (13680.0 - (462.0 - (132.0 - (99.0 - 140.0 / w2) / w2) / w2) / w2) / w / 166320.0
        )
        if aln <= bound:
            return y


INVERSION_MAX_MEAN = 30.0


@nb.njit(cache=True)
def binomial(state, n, p):
    """Binomial(n, p): inversion when n*min(p, 1-p) <= 30, BTPE otherwise."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    flip = p > 0.5
    pp = 1.0 - p if flip else p
    if n * pp <= INVERSION_MAX_MEAN:
        x = _binomial_inversion(state, n, pp)
    else:
        x = _binomial_btpe(state, n, pp)
    return n - x if flip else x


# ---------------------------------------------------------------------------
# bulk fills (used by the Python-facing stream object and by tests)


@nb.njit(cache=True)
def _fill_uniform(state, out):
    for i in range(out.size):
        out[i] = next_double(state)


@nb.njit(cache=True)
def _fill_normal(state, out):
    for i in range(out.size):
        out[i] = std_normal(state)


@nb.njit(cache=True)
def _fill_exponential(state, out):
    for i in range(out.size):
        out[i] = std_exponential(state)


@nb.njit(cache=True)
def _fill_gamma(state, shape, scale, out):
    for i in range(out.size):
        out[i] = scale * std_gamma(state, shape)


@nb.njit(cache=True)
def _fill_beta(state, a, b, out):
    for i in range(out.size):
        out[i] = beta(state, a, b)


@nb.njit(cache=True)
def _fill_binomial(state, n, p, out):
    for i in range(out.size):
        out[i] = binomial(state, n, p)


@nb.njit(cache=True)
def _fill_u64(state, out):
    for i in range(out.size):
        out[i] = next_u64(state)


def _check_u64(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= UINT64_MAX:
        raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")
    return value


@dataclass
class RngStream:
    """A single-owner random stream identified by ``(master_seed, stream_id)``.

    Do not share one instance between threads; create one stream per worker
    or replicate instead.
    """

    master_seed: int
    stream_id: int

    def __post_init__(self) -> None:
        self.master_seed = _check_u64("master_seed", self.master_seed)
        self.stream_id = _check_u64("stream_id", self.stream_id)
        self.state = new_state(np.uint64(self.master_seed), np.uint64(self.stream_id))

    @property
    def position(self) -> int:
        """Number of 64-bit words consumed so far."""
        return 2 * int(self.state[2]) - int(self.state[4])

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream_id": self.stream_id}

    @classmethod
    def from_dict(cls, data: dict) -> "RngStream":
        return cls(int(data["master_seed"]), int(data["stream_id"]))

    # scalar draws -----------------------------------------------------------
    def u64(self) -> int:
        return int(next_u64(self.state))

    def uniform(self) -> float:
        return next_double(self.state)

    def normal(self) -> float:
        return std_normal(self.state)

    def exponential(self, scale: float = 1.0) -> float:
        return scale * std_exponential(self.state)

    def gamma(self, shape: float, scale: float = 1.0) -> float:
        _positive(shape=shape, scale=scale)
        return gamma(self.state, float(shape), float(scale))

    def beta(self, a: float, b: float) -> float:
        _positive(a=a, b=b)
        return beta(self.state, float(a), float(b))

    def binomial(self, count: int, p: float) -> int:
        if count < 0 or not 0.0 <= p <= 1.0:
            raise ValueError(f"binomial needs count >= 0 and p in [0, 1], got ({count}, {p})")
        return int(binomial(self.state, int(count), float(p)))

    # bulk draws -------------------------------------------------------------
    def u64s(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.uint64)
        _fill_u64(self.state, out)
        return out

    def uniforms(self, size: int) -> np.ndarray:
        out = np.empty(size)
        _fill_uniform(self.state, out)
        return out

    def normals(self, size: int) -> np.ndarray:
        out = np.empty(size)
        _fill_normal(self.state, out)
        return out

    def exponentials(self, size: int) -> np.ndarray:
        out = np.empty(size)
        _fill_exponential(self.state, out)
        return out

    def gammas(self, shape: float, scale: float, size: int) -> np.ndarray:
        _positive(shape=shape, scale=scale)
        out = np.empty(size)
        _fill_gamma(self.state, float(shape), float(scale), out)
        return out

    def betas(self, a: float, b: float, size: int) -> np.ndarray:
        _positive(a=a, b=b)
        out = np.empty(size)
        _fill_beta(self.state, float(a), float(b), out)
        return out

    def binomials(self, count: int, p: float, size: int) -> np.ndarray:
        if count < 0 or not 0.0 <= p <= 1.0:
            raise ValueError(f"binomial needs count >= 0 and p in [0, 1], got ({count}, {p})")
        out = np.empty(size, dtype=np.int64)
        _fill_binomial(self.state, int(count), float(p), out)
        return out


def _positive(**params: float) -> None:
    for name, value in params.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def make_stream(master_seed: int, stream_id: int) -> RngStream:
    """Stream positioned at draw 0."""
    return RngStream(master_seed, stream_id)


def sample_gamma(stream: RngStream, shape: float, scale: float = 1.0) -> float:
    return stream.gamma(shape, scale)


def sample_beta(stream: RngStream, a: float, b: float) -> float:
    return stream.beta(a, b)


def sample_binomial(stream: RngStream, count: int, p: float) -> int:
    return stream.binomial(count, p)


def sample_uniform(stream: RngStream) -> float:
    return stream.uniform()


def sample_exponential(stream: RngStream, scale: float = 1.0) -> float:
    return stream.exponential(scale)
