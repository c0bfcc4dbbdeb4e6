"""Piecewise-smooth right-hand sides f(t, x, y) and their mollification in y.

Discontinuities live only on switching surfaces ``sigma_j(y) = 0`` in velocity
space.  A piece is selected by its sign pattern, a string over ``+``/``-``
with ``+`` at position j meaning ``sigma_j(y) > 0``.  Variables are named
``t, x1..xm, y1..ym``; for ``m = 1`` the aliases ``x``, ``psi`` (position)
and ``y`` (velocity) are accepted.
"""

import functools
import hashlib
import itertools
import json
import math

import numpy as np
from scipy import optimize

from . import kernels
from .errors import CoverError, DimensionError, FieldError, OnSurfaceError
from .exprdsl import as_expr, compile_expr, gradient

SURFACE_TOL = 1e-12


def var_names(m):
    return ["t"] + [f"x{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(m)]


def slot_map(m):
    return {name: i for i, name in enumerate(var_names(m))}


def _aliases(m):
    return {"x": "x1", "psi": "x1", "y": "y1"} if m == 1 else {}


def _normalize(e, m, allowed):
    e = as_expr(e).rename(_aliases(m))
    extra = e.free_vars - set(allowed)
    if extra:
        raise FieldError(
            f"expression {e.source!r} uses unknown variable(s) {sorted(extra)}; "
            f"allowed: {sorted(allowed)}")
    return e


def all_patterns(J):
    return ["".join(p) for p in itertools.product("+-", repeat=J)]


class PiecewiseSmoothField:
    """Right-hand side given by smooth pieces on the regions cut out by surfaces.

    Parameters
    ----------
    dim : int
        Dimension m of x and y.
    surfaces : sequence of expressions in ``y1..ym``
    pieces : mapping pattern -> sequence of m expressions in ``t, x, y``
    surface_tol : float
        ``|sigma_j(y)| <= surface_tol`` counts as on the surface.
    """

    def __init__(self, dim, surfaces, pieces, surface_tol=SURFACE_TOL, meta=None):
        if int(dim) != dim or dim < 1:
            raise DimensionError(f"dimension must be a positive integer, got {dim!r}")
        self.dim = m = int(dim)
        self.names = var_names(m)
        self.slots = slot_map(m)
        ynames = self.names[1 + m:]
        self.surfaces = tuple(_normalize(s, m, ynames) for s in surfaces)
        J = len(self.surfaces)
        expected = set(all_patterns(J))
        normalized = {}
        for pat, exprs in pieces.items():
            if pat in normalized:
                raise CoverError(f"sign pattern {pat!r} appears twice")
            if len(pat) != J or set(pat) - set("+-"):
                raise CoverError(f"sign pattern {pat!r} does not match {J} surface(s)")
            if isinstance(exprs, (str, int, float)) or hasattr(exprs, "root"):
                exprs = [exprs]
            exprs = list(exprs)
            if len(exprs) != m:
                raise DimensionError(
                    f"piece {pat!r} has {len(exprs)} component(s), field dimension is {m}")
            normalized[pat] = tuple(_normalize(e, m, self.names) for e in exprs)
        missing = expected - set(normalized)
        if missing:
            raise CoverError(f"sign patterns not covered: {sorted(missing)}")
        self.pieces = {p: normalized[p] for p in all_patterns(J)}
        self.surface_tol = float(surface_tol)
        self.meta = dict(meta or {})
        self._surface_progs = [compile_expr(s, self.slots) for s in self.surfaces]
        self._piece_progs = {p: [compile_expr(e, self.slots) for e in ex]
                             for p, ex in self.pieces.items()}

    # -- structure ---------------------------------------------------------

    @property
    def n_surfaces(self):
        return len(self.surfaces)

    @property
    def is_smooth(self):
        return not self.surfaces

    @property
    def free_vars(self):
        out = set()
        for ex in self.pieces.values():
            for e in ex:
                out |= e.free_vars
        return frozenset(out)

    def piece_programs(self, pattern):
        return self._piece_progs[pattern]

    def surface_program(self, j):
        return self._surface_progs[j]

    def describe(self):
        """JSON-ready description in the config layout."""
        return {
            "dim": self.dim,
            "surfaces": [s.source for s in self.surfaces],
            "pieces": [{"signs": p, "f": [e.source for e in ex]} for p, ex in self.pieces.items()],
        }

    @functools.cached_property
    def model_hash(self):
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- evaluation -----------------------------------------------------------

    def env(self, t, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.size != self.dim or y.size != self.dim:
            raise DimensionError(f"state must have {self.dim} components")
        return np.concatenate([[float(t)], x, y])

    def sigma(self, y):
        """Surface values ``sigma_j(y)``."""
        env = self.env(0.0, np.zeros(self.dim), y)
        return np.array([kernels.eval_program(p, env) for p in self._surface_progs])

    def surface_gradient(self, j, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        names = self.names[1 + self.dim:]
        return gradient(self.surfaces[j], names, dict(zip(names, y.tolist())))

    def pattern(self, y):
        """Sign pattern of ``y``; raises :class:`OnSurfaceError` on a surface."""
        s = self.sigma(y)
        on = np.flatnonzero(np.abs(s) <= self.surface_tol)
        if on.size:
            raise OnSurfaceError(
                f"y={np.atleast_1d(y).tolist()!r} lies on switching surface(s) {on.tolist()}; "
                "use the inclusion module for set-valued evaluation")
        return "".join("+" if v > 0 else "-" for v in s)

    def eval_piece(self, pattern, t, x, y):
        """Value of one piece, regardless of whether ``y`` lies in its region."""
        env = self.env(t, x, y)
        return np.array([kernels.eval_program(p, env) for p in self._piece_progs[pattern]])

    def eval_piece_batch(self, pattern, envs):
        return np.column_stack([kernels.eval_batch(p, envs) for p in self._piece_progs[pattern]])

    def __call__(self, t, x, y):
        return self.eval_piece(self.pattern(y), t, x, y)

    def representative_velocity(self, pattern, radius=10.0, n=41):
        """A velocity strictly inside the region of ``pattern`` (nearest grid point to 0)."""
        if not self.surfaces:
            return np.zeros(self.dim)
        g = np.linspace(-radius, radius, n)
        pts = np.array(list(itertools.product(g, repeat=self.dim)))
        pts = pts[np.argsort(np.linalg.norm(pts, axis=1), kind="stable")]
        envs = np.column_stack([np.zeros((len(pts), 1 + self.dim)), pts])
        S = np.column_stack([kernels.eval_batch(p, envs) for p in self._surface_progs])
        want = np.array([1.0 if c == "+" else -1.0 for c in pattern])
        ok = np.all(S * want > self.surface_tol, axis=1)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            raise FieldError(f"no sampled velocity in region {pattern!r}")
        return pts[idx[0]]

    def check_surfaces(self, radius=10.0, n=2001, grad_tol=1e-10):
        """Sample the surfaces' zero sets in ``[-radius, radius]^m`` and require a
        nonvanishing gradient there.  Returns the number of zero points checked."""
        count = 0
        m = self.dim
        names = self.names[1 + m:]
        if m > 2:
            return count
        g = np.linspace(-radius, radius, n if m == 1 else min(n, 201))
        for j, prog in enumerate(self._surface_progs):
            roots = []
            if m == 1:
                envs = np.column_stack([np.zeros((g.size, 2)), g])
                s = kernels.eval_batch(prog, envs)
                for i in np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:])):
                    roots.append([_bisect(lambda v: self._sigma_at(j, [v]), g[i], g[i + 1])])
            else:
                for a in (0, 1):
                    for c in g[::10]:
                        line = np.column_stack([g, np.full_like(g, c)]) if a == 0 else \
                            np.column_stack([np.full_like(g, c), g])
                        envs = np.column_stack([np.zeros((g.size, 3)), line])
                        s = kernels.eval_batch(prog, envs)
                        for i in np.flatnonzero(np.sign(s[:-1]) != np.sign(s[1:])):
                            p0, p1 = line[i], line[i + 1]
                            u = _bisect(lambda u: self._sigma_at(j, p0 + u * (p1 - p0)), 0.0, 1.0)
                            roots.append(p0 + u * (p1 - p0))
            for r in roots:
                gn = np.linalg.norm(gradient(self.surfaces[j], names, dict(zip(names, r))))
                if gn < grad_tol:
                    raise FieldError(
                        f"switching surface {j} has vanishing gradient at y={list(r)!r}")
                count += 1
        return count

    def _sigma_at(self, j, y):
        return kernels.eval_program(self._surface_progs[j], self.env(0.0, np.zeros(self.dim), y))


def _bisect(f, a, b, iters=200):
    fa = f(a)
    if fa == 0.0:
        return a
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def assemble_field(config, check=True):
    """Build a field from its config section.

    ``{"dim": m, "surfaces": ["y1"], "pieces": [{"signs": "+", "f": ["..."]}, ...]}``

    Raises
    ------
    CoverError
        When the sign patterns do not cover every region exactly once.
    DimensionError
        When a piece does not have ``dim`` components.
    """
    if not isinstance(config, dict):
        raise FieldError("field config must be an object")
    unknown = set(config) - {"dim", "surfaces", "pieces", "surface_tol"}
    if unknown:
        raise FieldError(f"unknown field key(s): {sorted(unknown)}")
    dim = config.get("dim", 1)
    surfaces = config.get("surfaces", [])
    pieces = {}
    for entry in config.get("pieces", []):
        if set(entry) - {"signs", "f"}:
            raise FieldError(f"unknown piece key(s): {sorted(set(entry) - {'signs', 'f'})}")
        pat = entry.get("signs", "")
        if pat in pieces:
            raise CoverError(f"sign pattern {pat!r} appears twice")
        pieces[pat] = entry["f"]
    field = PiecewiseSmoothField(dim, surfaces, pieces,
                                 surface_tol=config.get("surface_tol", SURFACE_TOL))
    if check:
        field.check_surfaces()
    return field


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def bump(s):
    """Standard bump ``exp(-1/(1-s^2))`` on ``|s| < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@functools.lru_cache(maxsize=None)
def _gauss(n):
    return np.polynomial.legendre.leggauss(n)


@functools.lru_cache(maxsize=None)
def bump_mass(m):
    """Integral of the bump over the unit ball in R^m (m = 1 or 2)."""
    x, w = _gauss(256)
    if m == 1:
        # split at 0: both halves are smooth up to the flat endpoint
        s = 0.5 * (x + 1.0)
        return float(2.0 * np.sum(0.5 * w * bump(s)))
    if m == 2:
        r = 0.5 * (x + 1.0)
        return float(2.0 * math.pi * np.sum(0.5 * w * r * bump(r)))
    raise DimensionError("mollification supports m <= 2")


class MollifierSpec:
    """Mollifier ``delta_k(z) = k^m phi(k z) / N`` supported in the ball of radius 1/k.

    ``nodes`` is the Gauss-Legendre count per axis.  For m = 1 the support is
    split at its centre and at every switching point, each part receiving
    ``max(nodes, 64)`` nodes; for m = 2 a polar rule with ``nodes`` radial and
    ``2 * nodes`` angular points is used, normalised to unit discrete mass.
    """

    def __init__(self, k, nodes=32):
        if k <= 0:
            raise ValueError("mollifier index k must be positive")
        self.k = k
        self.nodes = int(nodes)

    def __repr__(self):
        return f"MollifierSpec(k={self.k}, nodes={self.nodes})"

    def rule_1d(self, breaks=()):
        """Nodes ``s`` in (-1, 1) and weights for ``int g(s) phi(s) ds / N``."""
        cuts = sorted({-1.0, 0.0, 1.0, *[b for b in breaks if -1.0 < b < 1.0]})
        x, w = _gauss(max(self.nodes, 64))
        S, Wt = [], []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b - a <= 0.0:
                continue
            s = 0.5 * (b - a) * x + 0.5 * (a + b)
            S.append(s)
            Wt.append(0.5 * (b - a) * w * bump(s))
        S = np.concatenate(S)
        Wt = np.concatenate(Wt) / bump_mass(1)
        return S, Wt

    def rule_2d(self):
        x, w = _gauss(self.nodes)
        r = 0.5 * (x + 1.0)
        wr = 0.5 * w * r * bump(r)
        nt = 2 * self.nodes
        th = (np.arange(nt) + 0.5) * (2.0 * math.pi / nt)
        R, TH = np.meshgrid(r, th, indexing="ij")
        Wt = np.repeat(wr, nt)
        Wt = Wt / Wt.sum()
        pts = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
        return pts, Wt

    def mass(self, breaks=()):
        return float(self.rule_1d(breaks)[1].sum())


def _surface_roots_1d(field, j, lo, hi, n=33):
    prog = field.surface_program(j)
    g = np.linspace(lo, hi, n)
    envs = np.column_stack([np.zeros((n, 2)), g])
    s = kernels.eval_batch(prog, envs)
    roots = [g[i] for i in np.flatnonzero(s == 0.0)]
    for i in np.flatnonzero(s[:-1] * s[1:] < 0.0):
        roots.append(optimize.brentq(lambda v: field._sigma_at(j, [v]), g[i], g[i + 1],
                                     xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return roots


def mollify_eval(field, spec, t, x, y):
    """Quadrature value of ``f_k(t,x,y) = int f(t,x,z) delta_k(z - y) dz``.

    Raises
    ------
    DimensionError
        For m > 2.
    """
    m = field.dim
    if m > 2:
        raise DimensionError("mollification supports m <= 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if field.is_smooth and not _depends_on_y(field):
        return field.eval_piece("", t, x, y)
    k = float(spec.k)
    if m == 1:
        breaks = []
        for j in range(field.n_surfaces):
            breaks += [k * (r - y[0]) for r in _surface_roots_1d(field, j, y[0] - 1 / k, y[0] + 1 / k)]
        s, w = spec.rule_1d(breaks)
        Z = (y[0] + s / k)[:, None]
    else:
        pts, w = spec.rule_2d()
        Z = y[None, :] + pts / k
    n = Z.shape[0]
    envs = np.column_stack([np.full(n, float(t)), np.tile(x, (n, 1)), Z])
    out = np.zeros(m)
    if field.is_smooth:
        return w @ field.eval_piece_batch("", envs)
    S = np.column_stack([kernels.eval_batch(p, envs) for p in field._surface_progs])
    codes = (S > 0.0).astype(int) @ (1 << np.arange(field.n_surfaces)[::-1])
    J = field.n_surfaces
    for pat in field.pieces:
        code = int("".join("1" if c == "+" else "0" for c in pat), 2) if J else 0
        sel = np.flatnonzero(codes == code)
        if sel.size:
            out += w[sel] @ field.eval_piece_batch(pat, envs[sel])
    return out


def _depends_on_y(field):
    ynames = set(field.names[1 + field.dim:])
    return bool(field.free_vars & ynames)


# ---------------------------------------------------------------------------
# bound constant
# ---------------------------------------------------------------------------

def bound_constant(field, box, samples=1000, seed=0, x_filter=None, polish=True):
    """Sampled estimate of ``sup |f|`` over a compact ``(t, x)`` box.

    Each piece is evaluated at one representative velocity inside its region.
    The value is a lower estimate of the true supremum: random samples are
    followed by a bounded Powell polish of the best one.

    Parameters
    ----------
    box : dict
        ``{"t": (lo, hi), "x": [(lo, hi), ...]}``.
    x_filter : callable, optional
        Restricts positions (e.g. to ``F(x) <= c``); rejected samples are dropped.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    m = field.dim
    t_lo, t_hi = map(float, box.get("t", (0.0, 0.0)))
    xb = np.asarray(box.get("x", [(0.0, 0.0)] * m), dtype=float).reshape(m, 2)
    lo = np.concatenate([[t_lo], xb[:, 0]])
    hi = np.concatenate([[t_hi], xb[:, 1]])
    rng = np.random.default_rng(seed)
    P = lo + (hi - lo) * rng.random((samples, 1 + m))
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    P = np.vstack([P, corners, 0.5 * (lo + hi)])
    if x_filter is not None:
        keep = np.array([bool(x_filter(p[1:])) for p in P])
        P = P[keep]
        if P.size == 0:
            return 0.0
    best = 0.0
    for pat in field.pieces:
        yr = field.representative_velocity(pat)
        envs = np.column_stack([P, np.tile(yr, (len(P), 1))])
        vals = np.linalg.norm(field.eval_piece_batch(pat, envs), axis=1)
        i = int(np.argmax(vals))
        cand = float(vals[i])
        if polish and np.any(hi > lo):
            def neg(p):
                p = np.clip(p, lo, hi)
                try:
                    return -float(np.linalg.norm(field.eval_piece(pat, p[0], p[1:], yr)))
                except ArithmeticError:
                    return 0.0
            res = optimize.minimize(neg, P[i], method="Powell",
                                    bounds=list(zip(lo, hi)), options={"xtol": 1e-10, "ftol": 1e-14})
            p = np.clip(res.x, lo, hi)
            if (x_filter is None or x_filter(p[1:])) and -res.fun > cand:
                cand = -float(res.fun)
        best = max(best, cand)
    return best
