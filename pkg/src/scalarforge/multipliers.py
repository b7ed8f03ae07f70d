"""Symbols m(xi) of the drift operator, their even/odd split, the direction
pair (xi1, xi2) with vectors A, B, and the decomposition constants."""
from __future__ import annotations

import ast
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import OddMultiplier

_SAMPLE_SEED = 20150


class Symbol:
    """Degree-0 homogeneous multiplier xi -> m(xi) in C^dim.

    `fn` takes an array of shape (dim, ...) and returns (dim, ...); the value at
    xi = 0 is forced to 0.  Flags are measured on 10^3 random frequencies."""

    def __init__(self, name, fn, dim=2):
        self.name = name
        self.dim = dim
        self._fn = fn
        self._grid_cache = {}
        self._flags = None

    def __repr__(self):
        return f"Symbol({self.name!r})"

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape[0] != self.dim:
            raise ValueError(f"{self.name}: expected frequencies of dimension {self.dim}")
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.asarray(self._fn(xi), dtype=complex)
        m = np.broadcast_to(m, xi.shape).copy()
        zero = np.all(xi == 0, axis=0)
        m[:, zero] = 0.0
        return m

    def on_grid(self, g):
        if self.dim != 2:
            raise ValueError(f"{self.name} is a {self.dim}D symbol; the 2D tools reject it")
        m = self._grid_cache.get(g.n)
        if m is None:
            m = self(g.K)
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{self.name} is undefined at a resolved nonzero frequency")
            self._grid_cache[g.n] = m
        return m

    # -- algebra
    def __add__(self, other):
        return Symbol(f"({self.name}+{other.name})", lambda xi: self(xi) + other(xi), self.dim)

    def scale(self, s):
        return Symbol(f"{s}*{self.name}", lambda xi: s * self(xi), self.dim)

    # -- flags
    def defects(self, samples=1000, seed=_SAMPLE_SEED):
        """Max relative defects of the reality, divergence and homogeneity conditions."""
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(self.dim, samples))
        m = self(xi)
        mneg = self(-xi)
        s = rng.uniform(0.1, 10.0, size=samples)
        ms = self(xi * s)
        size = np.maximum(np.linalg.norm(m, axis=0), 1.0)
        real = np.max(np.linalg.norm(mneg - np.conj(m), axis=0) / size)
        div = np.max(np.abs((xi * m).sum(axis=0)) / (size * np.linalg.norm(xi, axis=0)))
        hom = np.max(np.linalg.norm(ms - m, axis=0) / size)
        return {"reality": float(real), "divergence": float(div), "homogeneity": float(hom)}

    def _flag(self, key):
        if self._flags is None:
            self._flags = self.defects()
        return self._flags[key] <= 1e-12

    @property
    def is_real_condition(self):
        return self._flag("reality")

    @property
    def is_divergence_free(self):
        return self._flag("divergence")

    @property
    def is_homogeneous(self):
        return self._flag("homogeneity")

    def parity_defects(self, samples=1000, seed=_SAMPLE_SEED):
        """(even defect, odd defect): how far m is from being odd / even."""
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(self.dim, samples))
        m, mneg = self(xi), self(-xi)
        scale = max(np.abs(m).max(), 1e-300)
        return (float(np.abs(0.5 * (m + mneg)).max() / scale),
                float(np.abs(0.5 * (m - mneg)).max() / scale))

    @property
    def is_odd(self):
        return self.parity_defects()[0] <= 1e-12

    @property
    def is_even(self):
        return self.parity_defects()[1] <= 1e-12


# ---------------------------------------------------------------- builtins

def _sqg(xi):
    r = np.sqrt(xi[0] ** 2 + xi[1] ** 2)
    return 1j * np.stack([-xi[1], xi[0]]) / r


def _ipm2d(xi):
    r2 = xi[0] ** 2 + xi[1] ** 2
    return np.stack([xi[0] * xi[1], -xi[0] ** 2]) / r2


def _ipm3d(xi):
    r2 = (xi ** 2).sum(axis=0)
    return np.stack([xi[0] * xi[2], xi[1] * xi[2], -xi[0] ** 2 - xi[1] ** 2]) / r2


def _mg(xi):
    x1, x2, x3 = xi
    r2 = (xi ** 2).sum(axis=0)
    den = x3 ** 2 * r2 + x2 ** 4
    num = np.stack([x2 * x3 * r2 + x1 * x2 ** 2 * x3,
                    -x1 * x3 * r2 + x2 ** 3 * x3,
                    -x2 ** 2 * (x1 ** 2 + x2 ** 2)])
    out = num / np.where(den == 0, 1.0, den)
    # the formula is defined as 0 on the plane xi3 = 0
    return np.where(x3 == 0, 0.0, out)


BUILTINS = {
    "sqg": (_sqg, 2),
    "ipm2d": (_ipm2d, 2),
    "ipm3d-formula": (_ipm3d, 3),
    "mg-formula": (_mg, 3),
}


def builtin_symbol(name: str, expr=None) -> Symbol:
    """Named symbol; name='custom' takes `expr` = (m1 string, m2 string)."""
    if name == "custom":
        if expr is None:
            raise ValueError("custom symbol needs component expressions")
        return custom_symbol(expr)
    if name not in BUILTINS:
        raise ValueError(f"unknown symbol {name!r}; known: {sorted(BUILTINS)} or custom")
    fn, dim = BUILTINS[name]
    return Symbol(name, fn, dim)


# ---------------------------------------------------------------- expressions
#
# expr    := term { ("+" | "-") term }
# term    := unary { ("*" | "/") unary }
# unary   := ("+" | "-") unary | power
# power   := atom [ "^" unary ]
# atom    := number | var | "i" | "pi" | func "(" expr ")" | "(" expr ")"
# var     := "xi1" | "xi2"          (symbols; "x1" | "x2" for seed fields)
# func    := "abs" | "sqrt" | "sin" | "cos" | "exp"
#
# abs(z) is the complex modulus; sqrt is the principal branch.

_FUNCS = {"abs": np.abs, "sqrt": lambda z: np.sqrt(z.astype(complex) if np.iscomplexobj(z) else z + 0j),
          "sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def parse_expression(text: str, variables=("xi1", "xi2")):
    """Compile an expression over two variables into a numpy function of both."""
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty symbol expression")
    if "**" in text:
        raise ValueError("use ^ for powers")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda a, b: v
        if isinstance(node, ast.Name):
            if node.id == variables[0]:
                return lambda a, b: a
            if node.id == variables[1]:
                return lambda a, b: b
            if node.id == "i":
                return lambda a, b: 1j
            if node.id == "pi":
                return lambda a, b: np.pi
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, lf, rf = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda a, b: op(lf(a, b), rf(a, b))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            f = build(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda a, b: -f(a, b)
            return f
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            fn, arg = _FUNCS[node.func.id], build(node.args[0])
            return lambda a, b: fn(np.asarray(arg(a, b)))
        raise ValueError(f"unsupported syntax in {text!r}: {ast.dump(node)[:60]}")

    return build(tree)


def custom_symbol(exprs, name=None) -> Symbol:
    if isinstance(exprs, str) or len(exprs) != 2:
        raise ValueError("custom symbols need exactly two component expressions")
    f1, f2 = parse_expression(exprs[0]), parse_expression(exprs[1])

    def fn(xi):
        a, b = xi[0], xi[1]
        return np.stack([np.broadcast_to(np.asarray(f1(a, b), dtype=complex), a.shape),
                         np.broadcast_to(np.asarray(f2(a, b), dtype=complex), a.shape)])

    return Symbol(name or f"custom[{exprs[0]}; {exprs[1]}]", fn, 2)


# ---------------------------------------------------------------- parity

def even_odd_split(sym: Symbol):
    even = Symbol(f"even({sym.name})", lambda xi: 0.5 * (sym(xi) + sym(-xi)), sym.dim)
    odd = Symbol(f"odd({sym.name})", lambda xi: 0.5 * (sym(xi) - sym(-xi)), sym.dim)
    return even, odd


# ---------------------------------------------------------------- direction pair

@dataclass(frozen=True)
class DirectionPair:
    xi1: tuple
    xi2: tuple
    A: np.ndarray
    B: np.ndarray

    @property
    def matrix(self):
        return np.column_stack([self.A, self.B])

    @property
    def inverse(self):
        return np.linalg.inv(self.matrix)

    @property
    def det(self):
        return float(np.linalg.det(self.matrix))

    def vector(self, tag):
        return self.A if tag == "A" else self.B

    def direction(self, tag):
        return self.xi1 if tag == "A" else self.xi2

    def decompose(self, R, tag="A"):
        """Split R = c_same * V + c_other * W with V the vector `tag`, W the other.

        R has shape (2, ...); returns (c_same, c_other)."""
        minv = self.inverse
        cA = minv[0, 0] * R[0] + minv[0, 1] * R[1]
        cB = minv[1, 0] * R[0] + minv[1, 1] * R[1]
        return (cA, cB) if tag == "A" else (cB, cA)

    def to_dict(self):
        return {"xi1": list(self.xi1), "xi2": list(self.xi2),
                "A": self.A.tolist(), "B": self.B.tolist(), "det": self.det}


def _canonical_lattice(radius):
    pts = []
    r = int(np.floor(radius))
    for a, b in itertools.product(range(-r, r + 1), repeat=2):
        if (a, b) == (0, 0) or a * a + b * b > radius * radius:
            continue
        # one representative per +-pair: first nonzero entry positive
        if a > 0 or (a == 0 and b > 0):
            pts.append((a, b))
    # by |xi|, then descending lexicographic order
    pts.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, -p[0], -p[1]))
    return pts


def select_direction_pair(sym: Symbol, search_radius=2.0, tol=1e-10) -> DirectionPair:
    """Pick integer xi1, xi2 maximizing |det[A|B]| with A = m(xi1) + m(-xi1).

    Candidates are ordered by |xi| and then descending lexicographic order; the
    first maximal pair wins.  Raises OddMultiplier if the even part vanishes."""
    if sym.dim != 2:
        raise ValueError(f"{sym.name} is not a 2D symbol; the construction is 2D only")
    cands = _canonical_lattice(search_radius)
    pts = np.array(cands, dtype=float).T
    V = sym(pts) + sym(-pts)
    if np.abs(V.imag).max() > 1e-10 * max(np.abs(V).max(), 1.0):
        raise ValueError(f"{sym.name}: m(xi) + m(-xi) is not real; reality condition fails")
    V = V.real
    if np.abs(V).max() <= tol:
        raise OddMultiplier(f"{sym.name}: even part vanishes on |xi| <= {search_radius}; "
                            "no direction pair exists")
    best, best_det = None, 0.0
    for i, j in itertools.combinations(range(len(cands)), 2):
        d = abs(V[0, i] * V[1, j] - V[1, i] * V[0, j])
        if d > best_det * (1 + 1e-12) + tol:
            best, best_det = (i, j), d
    if best is None:
        raise OddMultiplier(f"{sym.name}: even part has rank < 2 on the search ball")
    i, j = best
    return DirectionPair(cands[i], cands[j], V[:, i].copy(), V[:, j].copy())


@dataclass(frozen=True)
class ConstructionConstants:
    Z_dec: float
    K0: float
    K1: float
    coef_norm: float
    vector_norm: float

    def to_dict(self):
        return dict(Z_dec=self.Z_dec, K0=self.K0, K1=self.K1,
                    coef_norm=self.coef_norm, vector_norm=self.vector_norm)


def decomposition_constants(pair: DirectionPair) -> ConstructionConstants:
    """Norms of the map R -> (c_A, c_B) = [A|B]^{-1} R.

    Vector C0 norms are max-component norms, so the coefficient map norm is the
    max row sum of |[A|B]^{-1}|.  K1 = max(1, that norm) bounds |c| <= K1 ||R||.
    Z_dec bounds |c~ + c_J| / e_R given |c~| <= e_R and ||R|| <= e_J <= e_R,
    i.e. 1 + (row sum of the c_J row), maximized over the two vector roles."""
    M = pair.matrix
    if abs(np.linalg.det(M)) <= 1e-10:
        raise ValueError("singular direction pair")
    minv = np.linalg.inv(M)
    rows = np.abs(minv).sum(axis=1)
    coef = float(rows.max())
    vec = float(max(np.abs(pair.A).max() * rows[0], np.abs(pair.B).max() * rows[1]))
    K1 = max(1.0, coef)
    Z = 1.0 + coef
    return ConstructionConstants(Z_dec=Z, K0=2.0 * Z, K1=K1, coef_norm=coef, vector_norm=vec)
