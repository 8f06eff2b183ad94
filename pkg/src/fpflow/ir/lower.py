"""Lowering of floating-point and fused nodes to bit-level netlists.

Each behavioral node ``v`` becomes a sub-network of ``u_*`` primitives. Its
operands enter through ``reinterpret`` nodes that inherit the original edges
(sample delays and register requests included) and the sub-network ends in a
``reinterpret`` node that keeps the id ``v`` and its type, so fan-out edges and
ports are untouched. Fixed-point nodes are already bit-level and stay as they
are.
"""

from __future__ import annotations

from typing import Iterable, Optional

from ..fusedfp import Exc, FusedFormat
from ..softfloat import FpFormat
from .graph import Graph, Node, check
from .sim import is_lowered_node
from .types import BitsT, FixedT, FloatT, FusedT


class LoweringError(ValueError):
    pass


class Net:
    """Netlist builder for the sub-network replacing one node."""

    def __init__(self, g: Graph, owner: Node):
        self.g = g
        self.owner = owner
        self.n = 0
        self.consts: dict = {}

    def w(self, a: str) -> int:
        return self.g.nodes[a].out.width

    def op(self, kind: str, width: int, *ops: str, **attrs) -> str:
        self.n += 1
        nid = f"{self.owner.id}.{self.n}"
        while nid in self.g.nodes:
            self.n += 1
            nid = f"{self.owner.id}.{self.n}"
        attrs.setdefault("origin", self.owner.id)
        attrs.setdefault("origin_kind", self.owner.kind)
        self.g.add_node(Node(nid, kind, BitsT(width), attrs))
        for i, s in enumerate(ops):
            self.g.connect(s, nid, i)
        return nid

    def c(self, width: int, value: int) -> str:
        key = (width, int(value) & ((1 << width) - 1))
        if key not in self.consts:
            self.consts[key] = self.op("const", width, value=key[1])
        return self.consts[key]

    # arithmetic and logic; results are taken modulo 2**width
    def add(self, a, b, width=None):
        return self.op("u_add", width or max(self.w(a), self.w(b)), a, b)

    def sub(self, a, b, width=None):
        return self.op("u_sub", width or max(self.w(a), self.w(b)), a, b)

    def mul(self, a, b, width=None):
        return self.op("u_mul", width or self.w(a) + self.w(b), a, b)

    def and_(self, a, b):
        return self.op("u_and", max(self.w(a), self.w(b)), a, b)

    def or_(self, a, b):
        return self.op("u_or", max(self.w(a), self.w(b)), a, b)

    def xor(self, a, b):
        return self.op("u_xor", max(self.w(a), self.w(b)), a, b)

    def not_(self, a):
        return self.op("u_not", self.w(a), a)

    def shl(self, a, s, width=None):
        return self.op("u_shl", width or self.w(a), a, s)

    def shr(self, a, s, width=None):
        return self.op("u_shr", width or self.w(a), a, s)

    def lzc(self, a):
        return self.op("u_lzc", self.w(a).bit_length(), a)

    def eq(self, a, b):
        return self.op("u_eq", 1, a, b)

    def eqc(self, a, value):
        return self.eq(a, self.c(self.w(a), value))

    def ult(self, a, b):
        return self.op("u_ult", 1, a, b)

    def slt(self, a, b):
        return self.op("u_slt", 1, a, b)

    def orr(self, a):
        return self.op("u_orr", 1, a)

    def zext(self, a, width):
        return a if self.w(a) == width else self.op("u_resize", width, a, signed=False)

    def sext(self, a, width):
        return a if self.w(a) == width else self.op("u_resize", width, a, signed=True)

    def slice(self, a, lo, width):
        return self.op("slice", width, a, lo=lo)

    def bit(self, a, i):
        return self.slice(a, i, 1)

    def concat(self, *parts):
        acc = parts[0]
        for p in parts[1:]:
            acc = self.op("concat", self.w(acc) + self.w(p), acc, p)
        return acc

    def mux(self, sel, if0, if1):
        w = max(self.w(if0), self.w(if1))
        return self.op("mux", w, sel, self.zext(if0, w), self.zext(if1, w))

    def rep(self, bit, width):
        """Replicate a 1-bit signal."""
        return self.mux(bit, self.c(width, 0), self.c(width, -1))

    def finish(self, bits: str, out_type):
        """Re-type the result under the owner's id."""
        self.g.add_node(Node(self.owner.id, "reinterpret", out_type,
                             {k: v for k, v in self.owner.attrs.items() if k == "start_cycle"}))
        self.g.connect(bits, self.owner.id, 0)


# -- IEEE-format building blocks ------------------------------------------------

def unpack_float(net: Net, x: str, fmt: FpFormat) -> dict:
    we, wf = fmt.w_e, fmt.w_f
    e = net.slice(x, wf, we)
    f = net.slice(x, 0, wf)
    e_zero = net.eqc(e, 0)
    e_ones = net.eqc(e, fmt.exp_ones)
    f_zero = net.eqc(f, 0)
    return {
        "sign": net.bit(x, we + wf),
        "nan": net.and_(e_ones, net.not_(f_zero)),
        "inf": net.and_(e_ones, f_zero),
        "zero": net.and_(e_zero, f_zero),
        "M": net.concat(net.not_(e_zero), f),          # 1 + w_F bits
        "E": net.mux(e_zero, e, net.c(we, 1)),          # effective biased exponent
    }


def _x_width(*widths) -> int:
    return max(widths) + 6


def round_pack(net: Net, sign: str, M: str, X: str, fmt: FpFormat, faithful: bool,
               zero_sign: Optional[str] = None) -> str:
    """Round ``M * 2**X`` (M unsigned, X two's complement) into ``fmt``.

    Bits of M below the rounding position act as guard and sticky; callers fold
    any further sticky information into M's least significant bit. Exact zero
    gets ``zero_sign`` (default positive). Overflow produces infinity.
    """
    p, we, wf = fmt.p, fmt.w_e, fmt.w_f
    wm = net.w(M)
    if wm < p + 2:
        k = p + 2 - wm
        M = net.concat(M, net.c(k, 0))
        X = net.sub(net.sext(X, net.w(X) + 1), net.c(net.w(X) + 1, k))
        wm += k
    WX = _x_width(net.w(X), wm.bit_length(), we + 2)
    X = net.sext(X, WX)
    lz = net.zext(net.lzc(M), WX)
    Mn = net.shl(M, lz)
    Eb = net.sub(net.add(X, net.c(WX, wm - 1 + fmt.bias)), lz)
    zero = net.c(WX, 0)
    deficit = net.sub(net.c(WX, 1), Eb)
    extra = net.mux(net.slt(zero, deficit), zero, deficit)
    rshift = net.add(extra, net.c(WX, wm - p))
    q = net.shr(Mn, rshift, p)
    r1 = net.sub(rshift, net.c(WX, 1))
    q1 = net.zext(q, p + 1)
    if not faithful:
        guard = net.shr(Mn, r1, 1)
        mask = net.sub(net.shl(net.c(wm, 1), r1), net.c(wm, 1))
        sticky = net.orr(net.and_(Mn, mask))
        inc = net.and_(guard, net.or_(sticky, net.bit(q, 0)))
        q1 = net.add(q1, net.zext(inc, p + 1))
    is_sub = net.slt(Eb, net.c(WX, 1))
    base = net.mux(is_sub, net.sub(Eb, net.c(WX, 1)), zero)
    WP = WX + wf + 1
    packed = net.add(net.shl(net.zext(base, WP), net.c(wf.bit_length() + 1, wf)), net.zext(q1, WP))
    ovf = net.not_(net.ult(packed, net.c(WP, fmt.exp_ones << wf)))
    mag = net.mux(ovf, net.slice(packed, 0, we + wf), net.c(we + wf, fmt.exp_ones << wf))
    res = net.concat(sign, mag)
    zs = zero_sign or net.c(1, 0)
    return net.mux(net.eqc(M, 0), res, net.concat(zs, net.c(we + wf, 0)))


def _specials(net: Net, fmt: FpFormat, res: str, nan: str, inf: str, inf_sign: str) -> str:
    res = net.mux(inf, res, net.concat(inf_sign, net.c(fmt.width - 1, fmt.exp_ones << fmt.w_f)))
    return net.mux(nan, res, net.c(fmt.width, fmt.nan().bits))


def _normalize_sig(net: Net, M: str, X: str, WX: int):
    lz = net.lzc(M)
    return net.shl(M, lz), net.sub(net.sext(X, WX), net.zext(lz, WX))


def _exp_unbiased(net: Net, u: dict, fmt: FpFormat, WX: int) -> str:
    """Exponent of the significand's least significant bit."""
    return net.sub(net.zext(u["E"], WX), net.c(WX, fmt.bias + fmt.w_f))


def exact_sum(net: Net, sa, MA, XA, sb, MB, XB):
    """Sum of two signed terms, exact up to a sticky bit.

    Significands share one width; three guard/round/sticky positions are
    appended and the smaller term is aligned with its shifted-out bits ORed
    into the last position. Returns (sign, magnitude, exponent, both_zero).
    """
    W = net.w(MA)
    a_zero, b_zero = net.eqc(MA, 0), net.eqc(MB, 0)
    a_less = net.or_(net.slt(XA, XB), net.and_(net.eq(XA, XB), net.ult(MA, MB)))
    b_big = net.or_(a_zero, net.and_(net.not_(b_zero), a_less))
    Mg, Ms = net.mux(b_big, MA, MB), net.mux(b_big, MB, MA)
    Xg, Xs = net.mux(b_big, XA, XB), net.mux(b_big, XB, XA)
    sg = net.mux(b_big, sa, sb)
    WX = net.w(XA)
    d = net.sub(Xg, Xs)
    A = net.concat(Mg, net.c(3, 0))
    B0 = net.concat(Ms, net.c(3, 0))
    mask = net.sub(net.shl(net.c(W + 3, 1), d), net.c(W + 3, 1))
    B = net.or_(net.shr(B0, d), net.zext(net.orr(net.and_(B0, mask)), W + 3))
    eff_sub = net.xor(sa, sb)
    # one adder; subtraction via inverted operand and carry-in at the bottom
    lhs = net.concat(net.zext(A, W + 4), net.c(1, 1))
    rhs = net.concat(net.xor(net.zext(B, W + 4), net.rep(eff_sub, W + 4)), eff_sub)
    total = net.slice(net.add(lhs, rhs, W + 5), 1, W + 4)
    Xr = net.sub(Xg, net.c(WX, 3))
    both_zero = net.and_(a_zero, b_zero)
    return sg, total, Xr, both_zero


# -- per-kind lowering -------------------------------------------------------------

def _lower_float_add(net, node, ins, ts):
    fmt = node.out.fmt
    faithful = node.attrs.get("rounding") == "faithful"
    a, b = unpack_float(net, ins[0], fmt), unpack_float(net, ins[1], fmt)
    sb = b["sign"] if node.kind == "add" else net.not_(b["sign"])
    WX = _x_width(fmt.w_e)
    XA, XB = _exp_unbiased(net, a, fmt, WX), _exp_unbiased(net, b, fmt, WX)
    s, M, X, both_zero = exact_sum(net, a["sign"], a["M"], XA, sb, b["M"], XB)
    zs = net.and_(both_zero, net.and_(a["sign"], sb))
    res = round_pack(net, s, M, X, fmt, faithful, zs)
    nan = net.or_(net.or_(a["nan"], b["nan"]),
                  net.and_(net.and_(a["inf"], b["inf"]), net.xor(a["sign"], sb)))
    inf = net.or_(a["inf"], b["inf"])
    return _specials(net, fmt, res, nan, inf, net.mux(a["inf"], sb, a["sign"]))


def _lower_float_mul(net, node, ins, ts):
    fmt = node.out.fmt
    faithful = node.attrs.get("rounding") == "faithful"
    a, b = unpack_float(net, ins[0], fmt), unpack_float(net, ins[1], fmt)
    s = net.xor(a["sign"], b["sign"])
    WX = _x_width(fmt.w_e + 1)
    X = net.add(_exp_unbiased(net, a, fmt, WX), _exp_unbiased(net, b, fmt, WX))
    res = round_pack(net, s, net.mul(a["M"], b["M"]), X, fmt, faithful, s)
    zero = net.or_(a["zero"], b["zero"])
    inf = net.or_(a["inf"], b["inf"])
    nan = net.or_(net.or_(a["nan"], b["nan"]), net.and_(inf, zero))
    return _specials(net, fmt, res, nan, inf, s)


def _lower_float_div(net, node, ins, ts):
    fmt = node.out.fmt
    p = fmt.p
    faithful = node.attrs.get("rounding") == "faithful"
    a, b = unpack_float(net, ins[0], fmt), unpack_float(net, ins[1], fmt)
    s = net.xor(a["sign"], b["sign"])
    WX = _x_width(fmt.w_e + 1)
    Ma, Xa = _normalize_sig(net, a["M"], _exp_unbiased(net, a, fmt, WX), WX)
    Mb, Xb = _normalize_sig(net, b["M"], _exp_unbiased(net, b, fmt, WX), WX)
    num = net.concat(Ma, net.c(p + 2, 0))
    den = net.zext(Mb, 2 * p + 2)
    q = net.op("u_divu", p + 3, num, den)
    rem = net.op("u_modu", p, num, den)
    M = net.concat(q, net.orr(rem))
    X = net.sub(net.sub(Xa, Xb), net.c(WX, p + 3))
    # zero quotient when the dividend is zero; divisor zero is caught below
    M = net.mux(a["zero"], M, net.c(net.w(M), 0))
    res = round_pack(net, s, M, X, fmt, faithful, s)
    nan = net.or_(net.or_(a["nan"], b["nan"]),
                  net.or_(net.and_(a["inf"], b["inf"]), net.and_(a["zero"], b["zero"])))
    inf = net.or_(a["inf"], b["zero"])
    res = net.mux(b["inf"], res, net.concat(s, net.c(fmt.width - 1, 0)))
    return _specials(net, fmt, res, nan, inf, s)


def _lower_fma(net, node, ins, ts):
    fmt = node.out.fmt
    p = fmt.p
    faithful = node.attrs.get("rounding") == "faithful"
    a, b, c = (unpack_float(net, x, fmt) for x in ins)
    sp = net.xor(a["sign"], b["sign"])
    WX = _x_width(fmt.w_e + 2)
    Xp = net.add(_exp_unbiased(net, a, fmt, WX), _exp_unbiased(net, b, fmt, WX))
    Mp, Xp = _normalize_sig(net, net.mul(a["M"], b["M"]), Xp, WX)
    Mc = net.concat(c["M"], net.c(p, 0))
    Xc = net.sub(_exp_unbiased(net, c, fmt, WX), net.c(WX, p))
    Mc, Xc = _normalize_sig(net, Mc, Xc, WX)
    s, M, X, both_zero = exact_sum(net, sp, Mp, Xp, c["sign"], Mc, Xc)
    zs = net.and_(both_zero, net.and_(sp, c["sign"]))
    res = round_pack(net, s, M, X, fmt, faithful, zs)
    pzero = net.or_(a["zero"], b["zero"])
    pinf = net.or_(a["inf"], b["inf"])
    nan = net.or_(net.or_(net.or_(a["nan"], b["nan"]), c["nan"]),
                  net.or_(net.and_(pinf, pzero),
                          net.and_(net.and_(pinf, c["inf"]), net.xor(sp, c["sign"]))))
    inf = net.or_(pinf, c["inf"])
    return _specials(net, fmt, res, nan, inf, net.mux(pinf, c["sign"], sp))


def _lower_float_neg(net, node, ins, ts):
    fmt = node.out.fmt
    u = unpack_float(net, ins[0], fmt)
    flipped = net.xor(ins[0], net.c(fmt.width, 1 << (fmt.width - 1)))
    return net.mux(u["nan"], flipped, ins[0])


def _lower_convert(net, node, ins, ts):
    src, dst = ts[0], node.out
    faithful = node.attrs.get("rounding") == "faithful"
    if isinstance(src, FloatT) and isinstance(dst, FloatT):
        u = unpack_float(net, ins[0], src.fmt)
        WX = _x_width(src.fmt.w_e, dst.fmt.w_e)
        res = round_pack(net, u["sign"], u["M"], _exp_unbiased(net, u, src.fmt, WX),
                         dst.fmt, faithful, u["sign"])
        return _specials(net, dst.fmt, res, u["nan"], u["inf"], u["sign"])
    if isinstance(src, FixedT) and isinstance(dst, FloatT):
        f = src.fmt
        w = f.width
        neg = net.bit(ins[0], w - 1) if f.signed else net.c(1, 0)
        wide = net.sext(ins[0], w + 1) if f.signed else net.zext(ins[0], w + 1)
        mag = net.mux(neg, wide, net.sub(net.c(w + 1, 0), wide))
        X = net.c(_x_width(f.width.bit_length(), dst.fmt.w_e), -f.frac)
        return round_pack(net, neg, mag, X, dst.fmt, faithful)
    if isinstance(src, FloatT) and isinstance(dst, FixedT):
        return _float_to_fixed(net, node, ins[0], src.fmt, dst.fmt)
    raise LoweringError(f"node {node.id}: no lowering for conversion {src} -> {dst}")


def _float_to_fixed(net, node, x, fmt: FpFormat, fx):
    u = unpack_float(net, x, fmt)
    w = fx.width
    WX = _x_width(fmt.w_e, w.bit_length())
    s = net.add(_exp_unbiased(net, u, fmt, WX), net.c(WX, fx.frac))
    Wi = w + fmt.p + 2
    s_neg = net.slt(s, net.c(WX, 0))
    big = net.slt(net.c(WX, w + 1), s)
    left = net.shl(net.zext(u["M"], Wi), s)
    amt = net.sub(net.c(WX, 0), s)
    right = net.shr(net.zext(u["M"], Wi), amt)
    mask = net.sub(net.shl(net.c(Wi, 1), amt), net.c(Wi, 1))
    lost = net.and_(s_neg, net.orr(net.and_(net.zext(u["M"], Wi), mask)))
    mag = net.mux(s_neg, left, right)
    # floor of a negative value rounds its magnitude up
    neg_n = net.sub(net.c(Wi + 1, 0), net.add(net.zext(mag, Wi + 1), net.zext(lost, Wi + 1)))
    n = net.mux(u["sign"], net.zext(mag, Wi + 1), neg_n)
    pat = net.slice(n, 0, w)
    max_pat, min_pat = net.c(w, fx.int_max), net.c(w, fx.int_min)
    sat = node.attrs.get("overflow", "saturate") == "saturate"
    if sat:
        lo = net.slt(n, net.c(Wi + 1, fx.int_min))
        hi = net.slt(net.c(Wi + 1, fx.int_max), n)
        big_pos = net.and_(big, net.not_(u["sign"]))
        big_neg = net.and_(big, u["sign"])
        pat = net.mux(net.or_(hi, big_pos), pat, max_pat)
        pat = net.mux(net.or_(lo, big_neg), pat, min_pat)
    pat = net.mux(u["inf"], pat, net.mux(u["sign"], max_pat, min_pat))
    return net.mux(u["nan"], pat, net.c(w, 0))


def _lower_float_cmp(net, node, ins, ts):
    fmt = ts[0].fmt
    op = node.attrs.get("op", "lt")
    ua, ub = unpack_float(net, ins[0], fmt), unpack_float(net, ins[1], fmt)
    w = fmt.width

    def key(x, u):
        mag = net.zext(net.slice(x, 0, w - 1), w)
        return net.mux(u["sign"], mag, net.sub(net.c(w, 0), mag))

    a, b = key(ins[0], ua), key(ins[1], ub)
    lt, eq = net.slt(a, b), net.eq(a, b)
    gt = net.slt(b, a)
    r = {"lt": lt, "le": net.or_(lt, eq), "eq": eq, "ne": net.not_(eq),
         "gt": gt, "ge": net.or_(gt, eq)}[op]
    nan = net.or_(ua["nan"], ub["nan"])
    return net.mux(nan, r, net.c(1, 1 if op == "ne" else 0))


# -- fused datapath --------------------------------------------------------------

def unpack_fused(net: Net, x: str, fmt: FusedFormat) -> dict:
    fw, ew = fmt.frac_width, fmt.exp_width
    exc = net.slice(x, fw + ew + 1, 3)
    return {
        "frac": net.slice(x, 0, fw), "exp": net.slice(x, fw, ew),
        "sign": net.bit(x, fw + ew),
        "zero": net.eqc(exc, Exc.ZERO), "normal": net.eqc(exc, Exc.NORMAL),
        "inf": net.eqc(exc, Exc.INF), "nan": net.eqc(exc, Exc.NAN),
    }


def pack_fused(net: Net, fmt: FusedFormat, exc: str, sign: str, exp: str, frac: str) -> str:
    fw, ew = fmt.frac_width, fmt.exp_width
    normal = net.eqc(exc, Exc.NORMAL)
    body = net.mux(normal, net.c(ew + fw, 0), net.concat(net.slice(exp, 0, ew), net.zext(frac, fw)))
    sign = net.mux(net.eqc(exc, Exc.NAN), sign, net.c(1, 0))
    return net.concat(exc, sign, body)


def _sel_exc(net, cond, value, cur):
    return net.mux(cond, cur, net.c(3, value))


def _ranged(net, fmt: FusedFormat, sign, e, frac, EW):
    """Saturate out-of-range exponents (EW-bit signed ``e``) as the fused wire does."""
    over = net.slt(net.c(EW, fmt.exp_hi), e)
    under = net.slt(e, net.c(EW, fmt.exp_lo))
    exc = net.c(3, Exc.NORMAL)
    exc = _sel_exc(net, under, Exc.ZERO, exc)
    exc = _sel_exc(net, over, Exc.INF, exc)
    fz = net.eqc(frac, 0)
    exc = _sel_exc(net, fz, Exc.ZERO, exc)
    sign = net.mux(fz, sign, net.c(1, 0))
    return exc, sign


def _lower_cast_to_fused(net, node, ins, ts):
    base = ts[0].fmt
    fo = node.out.fmt
    u = unpack_float(net, ins[0], base)
    ew = fo.exp_width
    lz = net.lzc(u["M"])
    frac = net.shl(u["M"], lz)
    exp = net.sub(net.zext(u["E"], ew), net.zext(lz, ew))
    exc = net.c(3, Exc.NORMAL)
    exc = _sel_exc(net, u["zero"], Exc.ZERO, exc)
    exc = _sel_exc(net, u["inf"], Exc.INF, exc)
    exc = _sel_exc(net, u["nan"], Exc.NAN, exc)
    return pack_fused(net, fo, exc, u["sign"], exp, frac)


def _lower_cast_to_ieee(net, node, ins, ts):
    fi = ts[0].fmt
    base = node.out.fmt
    v = unpack_fused(net, ins[0], fi)
    WX = _x_width(fi.exp_width)
    X = net.sub(net.sext(v["exp"], WX), net.c(WX, base.bias + base.w_f))
    M = net.mux(v["normal"], net.c(fi.frac_width, 0), v["frac"])
    res = round_pack(net, v["sign"], M, X, base, False, v["sign"])
    return _specials(net, base, res, v["nan"], v["inf"], v["sign"])


def _lower_fused_add(net, node, ins, ts):
    fi = ts[0].fmt
    fo = node.out.fmt
    a, b = unpack_fused(net, ins[0], fi), unpack_fused(net, ins[1], fi)
    sb = b["sign"] if node.kind == "fused_add" else net.not_(b["sign"])
    fw = fi.frac_width
    EW = fi.exp_width + 1
    ea, eb = net.sext(a["exp"], EW), net.sext(b["exp"], EW)
    xa, xb = net.concat(a["frac"], net.c(1, 0)), net.concat(b["frac"], net.c(1, 0))
    b_big = net.slt(ea, eb)
    X, Y = net.mux(b_big, xa, xb), net.mux(b_big, xb, xa)
    EX, EY = net.mux(b_big, ea, eb), net.mux(b_big, eb, ea)
    SX, SY = net.mux(b_big, a["sign"], sb), net.mux(b_big, sb, a["sign"])
    d = net.sub(EX, EY)
    mask = net.sub(net.shl(net.c(fw + 1, 1), d), net.c(fw + 1, 1))
    Ys = net.or_(net.shr(Y, d), net.zext(net.orr(net.and_(Y, mask)), fw + 1))
    fwo = fo.frac_width
    same = net.eq(SX, SY)
    total = net.add(net.zext(X, fwo), net.zext(Ys, fwo))
    diff = net.sub(net.zext(X, fwo), net.zext(Ys, fwo))
    neg = net.bit(diff, fwo - 1)
    absdiff = net.mux(neg, diff, net.sub(net.c(fwo, 0), diff))
    frac = net.mux(same, absdiff, total)
    sign = net.mux(same, net.mux(neg, SX, SY), SX)
    exc = net.mux(net.eqc(frac, 0), net.c(3, Exc.NORMAL), net.c(3, Exc.ZERO))
    sign = net.mux(net.eqc(frac, 0), sign, net.c(1, 0))
    exp = EX
    # a zero operand passes the other one through, widened
    b_only, a_only = net.and_(a["zero"], b["normal"]), net.and_(b["zero"], a["normal"])
    for cond, src, s in ((b_only, b, sb), (a_only, a, a["sign"])):
        exc = _sel_exc(net, cond, Exc.NORMAL, exc)
        sign = net.mux(cond, sign, s)
        exp = net.mux(cond, exp, net.sext(src["exp"], EW))
        frac = net.mux(cond, frac, net.zext(net.concat(src["frac"], net.c(1, 0)), fwo))
    both_zero = net.and_(a["zero"], b["zero"])
    exc = _sel_exc(net, both_zero, Exc.ZERO, exc)
    sign = net.mux(both_zero, sign, net.and_(a["sign"], sb))
    exc = _sel_exc(net, b["inf"], Exc.INF, exc)
    sign = net.mux(b["inf"], sign, sb)
    exc = _sel_exc(net, a["inf"], Exc.INF, exc)
    sign = net.mux(a["inf"], sign, a["sign"])
    nan = net.or_(net.or_(a["nan"], b["nan"]),
                  net.and_(net.and_(a["inf"], b["inf"]), net.xor(a["sign"], sb)))
    exc = _sel_exc(net, nan, Exc.NAN, exc)
    return pack_fused(net, fo, exc, sign, exp, frac)


def _lower_fused_mul(net, node, ins, ts):
    fi = ts[0].fmt
    fo = node.out.fmt
    wf, bias = fi.base.w_f, fi.base.bias
    a, b = unpack_fused(net, ins[0], fi), unpack_fused(net, ins[1], fi)
    sign = net.xor(a["sign"], b["sign"])
    EW = fi.exp_width + 3
    e = net.sub(net.add(net.sext(a["exp"], EW), net.sext(b["exp"], EW)), net.c(EW, bias))
    p = net.mul(a["frac"], b["frac"])
    if node.attrs.get("form", "level0") == "wide":
        keep = net.slice(p, wf - 1, wf + 3)
        if wf > 1:
            keep = net.or_(keep, net.zext(net.orr(net.slice(p, 0, wf - 1)), wf + 3))
        frac = keep
    else:
        top = net.bit(p, 2 * wf + 1)
        m = net.mux(top, net.slice(p, wf, wf + 1), net.slice(p, wf + 1, wf + 1))
        guard = net.mux(top, net.bit(p, wf - 1), net.bit(p, wf))
        low0 = net.orr(net.slice(p, 0, wf - 1)) if wf > 1 else net.c(1, 0)
        low1 = net.orr(net.slice(p, 0, wf))
        sticky = net.mux(top, low0, low1)
        e = net.add(e, net.zext(top, EW))
        inc = net.and_(guard, net.or_(sticky, net.bit(m, 0)))
        m1 = net.add(net.zext(m, wf + 2), net.zext(inc, wf + 2))
        carry = net.bit(m1, wf + 1)
        frac = net.mux(carry, net.slice(m1, 0, wf + 1), net.c(wf + 1, 1 << wf))
        e = net.add(e, net.zext(carry, EW))
    exc, sign_n = _ranged(net, fo, sign, e, frac, EW)
    zero = net.or_(a["zero"], b["zero"])
    inf = net.or_(a["inf"], b["inf"])
    exc = _sel_exc(net, zero, Exc.ZERO, exc)
    sign_n = net.mux(zero, sign_n, sign)
    exc = _sel_exc(net, inf, Exc.INF, exc)
    sign_n = net.mux(inf, sign_n, sign)
    nan = net.or_(net.or_(a["nan"], b["nan"]), net.and_(inf, zero))
    exc = _sel_exc(net, nan, Exc.NAN, exc)
    return pack_fused(net, fo, exc, sign_n, e, frac)


def _lower_normalize(net, node, ins, ts):
    fi = ts[0].fmt
    fo = node.out.fmt
    wf = fi.base.w_f
    fw = fi.frac_width
    v = unpack_fused(net, ins[0], fi)
    lz = net.lzc(v["frac"])
    Fn = net.shl(v["frac"], lz)
    EW = fi.exp_width + max(4, fw.bit_length() + 2)
    e = net.add(net.sext(v["exp"], EW), net.c(EW, fw - (wf + 1) - fi.level))
    e = net.sub(e, net.zext(lz, EW))
    low = fw - (wf + 1)
    m = net.slice(Fn, low, wf + 1)
    if low:
        guard = net.bit(Fn, low - 1)
        sticky = net.orr(net.slice(Fn, 0, low - 1)) if low > 1 else net.c(1, 0)
        inc = net.and_(guard, net.or_(sticky, net.bit(m, 0)))
        m1 = net.add(net.zext(m, wf + 2), net.zext(inc, wf + 2))
        carry = net.bit(m1, wf + 1)
        m = net.mux(carry, net.slice(m1, 0, wf + 1), net.c(wf + 1, 1 << wf))
        e = net.add(e, net.zext(carry, EW))
    exc, sign = _ranged(net, fo, v["sign"], e, m, EW)
    exc = _sel_exc(net, v["zero"], Exc.ZERO, exc)
    sign = net.mux(v["zero"], sign, v["sign"])
    exc = _sel_exc(net, v["inf"], Exc.INF, exc)
    sign = net.mux(v["inf"], sign, v["sign"])
    exc = _sel_exc(net, v["nan"], Exc.NAN, exc)
    return pack_fused(net, fo, exc, sign, e, m)


_FLOAT_LOWERINGS = {
    "add": _lower_float_add, "sub": _lower_float_add, "mul": _lower_float_mul,
    "div": _lower_float_div, "fma": _lower_fma, "neg": _lower_float_neg,
}
_FUSED_LOWERINGS = {
    "fused_add": _lower_fused_add, "fused_sub": _lower_fused_add,
    "fused_mul": _lower_fused_mul, "normalize": _lower_normalize,
}


def _lowering_for(node: Node, ts):
    k = node.kind
    if k in _FLOAT_LOWERINGS and isinstance(node.out, FloatT):
        return _FLOAT_LOWERINGS[k]
    if k in _FUSED_LOWERINGS:
        return _FUSED_LOWERINGS[k]
    if k == "cast":
        return _lower_cast_to_fused if node.attrs.get("to") == "fused" else _lower_cast_to_ieee
    if k == "convert":
        return _lower_convert
    if k == "cmp" and isinstance(ts[0], FloatT):
        return _lower_float_cmp
    return None


def lower(g: Graph, only: Optional[Iterable[str]] = None) -> Graph:
    """Expand behavioral nodes into bit-level netlists.

    ``only`` restricts lowering to the given node ids (subsystem mode). The
    result simulates bit-identically to the input; lowering a lowered graph
    returns an unchanged copy.
    """
    check(g)
    out = g.copy()
    from ..funcgen import expand_func_nodes
    out = expand_func_nodes(out, only)
    selected = None if only is None else set(only)
    opmap = out.operand_map()
    todo = []
    for n in list(out.nodes.values()):
        if is_lowered_node(out, n):
            continue
        if selected is not None and n.id not in selected and n.attrs.get("origin") not in selected:
            continue
        ts = [out.nodes[e.src].out for e in opmap.get(n.id, [])]
        fn = _lowering_for(n, ts)
        if fn is None:
            raise LoweringError(f"node {n.id}: cannot lower kind {n.kind!r} producing {n.out}")
        todo.append((n, fn, ts))
    for n, fn, ts in todo:
        edges = opmap.get(n.id, [])
        del out.nodes[n.id]
        net = Net(out, n)
        ins = []
        for e in edges:
            t = out.nodes[e.src].out
            nid = net.op("reinterpret", t.width)
            e.dst = nid
            e.port = 0
            ins.append(nid)
        net.finish(fn(net, n, ins, ts), n.out)
    return check(out)
