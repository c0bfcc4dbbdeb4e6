"""Built-in models: the wheel pendulum with Coulomb friction and the
potential system with a smooth cutoff.

Pendulum (normalised units, friction opposing the angular velocity)::

    psi'' = sin(psi + Phi(t)) - K(psi) sign(psi') - omega'(t)

with ``Phi`` a closed-form antiderivative of the wheel speed ``omega``.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, DimensionError
from .exprdsl import Binary, Call, Const, Diff, Expr, Unary, Var, as_expr, differentiate, evaluate
from .field import PiecewiseSmoothField, assemble_field

BOUND_SLACK = 1e-9
PHI_TOL = 1e-8


@dataclass
class PendulumParams:
    """Friction law, wheel motion and the declared bounds on them."""

    K: str = "0.2"
    omega: str = "0"
    Phi: str = "0"
    K_star: float = 0.2
    Phi_star: float = 0.0
    eps: float = 0.0
    psi_star: float = 0.5
    t_window: tuple = (-50.0, 50.0)
    samples: int = 10_000

    def __post_init__(self):
        for name in ("K_star", "Phi_star", "eps", "psi_star"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        self.K_expr = as_expr(self.K).rename({"psi": "x1", "x": "x1"})
        self.omega_expr = as_expr(self.omega)
        self.Phi_expr = as_expr(self.Phi)
        if self.K_expr.free_vars - {"x1"}:
            raise ConfigError(f"K may depend on psi only, got {sorted(self.K_expr.free_vars)}")
        for name, e in (("omega", self.omega_expr), ("Phi", self.Phi_expr)):
            if e.free_vars - {"t"}:
                raise ConfigError(f"{name} may depend on t only, got {sorted(e.free_vars)}")

    def omega_dot(self, t):
        return differentiate(self.omega_expr, "t", {"t": float(t)})

    def verify_bounds(self):
        """Sample the declared bounds; returns the sampled suprema.

        Raises :class:`ConfigError` when a declared bound is exceeded by more
        than ``1e-9`` or when ``Phi' = omega`` fails by ``1e-8``.
        """
        n = self.samples
        psi = np.linspace(0.0, 2.0 * math.pi, n)
        ts = np.linspace(self.t_window[0], self.t_window[1], n)
        K = np.array([evaluate(self.K_expr, {"x1": p}) for p in psi])
        Phi = np.array([evaluate(self.Phi_expr, {"t": t}) for t in ts])
        wdot = np.array([self.omega_dot(t) for t in ts])
        mismatch = np.array([differentiate(self.Phi_expr, "t", {"t": t})
                             - evaluate(self.omega_expr, {"t": t}) for t in ts])
        found = {"K": float(K.max()), "K_min": float(K.min()), "Phi": float(np.abs(Phi).max()),
                 "eps": float(np.abs(wdot).max()), "Phi_omega": float(np.abs(mismatch).max())}
        if found["K_min"] < -BOUND_SLACK:
            raise ConfigError(f"friction K(psi) takes negative value {found['K_min']!r}")
        if found["K"] > self.K_star + BOUND_SLACK:
            raise ConfigError(f"declared K_star={self.K_star!r} below sampled sup K={found['K']!r}")
        if found["Phi"] > self.Phi_star + BOUND_SLACK:
            raise ConfigError(
                f"declared Phi_star={self.Phi_star!r} below sampled sup |Phi|={found['Phi']!r}")
        if found["eps"] > self.eps + BOUND_SLACK:
            raise ConfigError(
                f"declared eps={self.eps!r} below sampled sup |omega'|={found['eps']!r}")
        if found["Phi_omega"] >= PHI_TOL:
            raise ConfigError(f"Phi is not an antiderivative of omega (|Phi' - omega| = "
                              f"{found['Phi_omega']:.3e})")
        return found


def build_pendulum(params, verify=True):
    """Field with surface ``sigma = y1`` and pieces
    ``sin(x1 + Phi) - K - omega'`` for ``y1 > 0`` and ``... + K`` for ``y1 < 0``."""
    if verify:
        params.verify_bounds()
    drive = Unary("sin", Binary("+", Var("x1"), params.Phi_expr.root))
    if "t" in params.omega_expr.free_vars:
        drive = Binary("-", drive, Diff(params.omega_expr.root, "t"))
    K = params.K_expr.root
    pieces = {"+": [Expr(Binary("-", drive, K))], "-": [Expr(Binary("+", drive, K))]}
    return PiecewiseSmoothField(1, ["y1"], pieces,
                                meta={"model": "pendulum", "drive": Expr(drive)})


def pendulum_drive(params, t, psi):
    """``sin(psi + Phi(t)) - omega'(t)``."""
    return math.sin(psi + evaluate(params.Phi_expr, {"t": t})) - params.omega_dot(t)


def check_pendulum_condition(params):
    """Evaluate the two parameter inequalities that keep the pendulum up.

    ``slack1 = pi/2 - (psi* + Phi*) >= 0`` and
    ``slack2 = sin(psi* - Phi*) - K* - eps > 0``.
    """
    s1 = math.pi / 2 - (params.psi_star + params.Phi_star)
    s2 = math.sin(params.psi_star - params.Phi_star) - params.K_star - params.eps
    ok = s1 >= 0.0 and s2 > 0.0
    report = {"check": "pendulum_condition", "pass": ok,
              "slack": {"slack1": s1, "slack2": s2}}
    if ok:
        report["guarantee"] = {
            "statement": "the pendulum never falls down: a solution defined for all "
                         "t stays in |psi| <= psi_star",
            "bound": params.psi_star,
        }
    return report


@dataclass(frozen=True)
class CutoffSpec:
    """``eta = 1`` on ``F <= c``, ``eta = 0`` on ``F >= c_outer``, quintic smoothstep between."""

    c: float
    c_outer: float

    def __post_init__(self):
        if not self.c_outer > self.c:
            raise ConfigError("cutoff requires c_outer > c")

    def expr(self, F):
        """Cutoff as an expression tree in the variables of ``F``."""
        F = as_expr(F).root
        u = Binary("/", Binary("-", F, Const(float(self.c))), Const(float(self.c_outer - self.c)))
        u = Call("min", (Call("max", (u, Const(0.0))), Const(1.0)))
        # smoothstep 6u^5 - 15u^4 + 10u^3 in Horner form
        poly = Binary("+", Const(10.0), Binary("*", u, Binary("+", Const(-15.0),
                                                              Binary("*", Const(6.0), u))))
        step = Binary("*", Binary("*", Binary("*", u, u), u), poly)
        return Expr(Binary("-", Const(1.0), step))


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 + s * (-15.0 + 6.0 * s))


def build_potential_system(F_expr, perturbation, cutoff=None):
    """Field with pieces ``eta(x) grad F(x) + f_piece`` over the surfaces of
    ``perturbation``; ``grad F`` by forward-mode AD.

    Raises
    ------
    DimensionError
        When ``F`` uses positions beyond the perturbation's dimension.
    """
    m = perturbation.dim
    xnames = [f"x{i + 1}" for i in range(m)]
    aliases = {"x": "x1", "psi": "x1"} if m == 1 else {}
    F = as_expr(F_expr).rename(aliases)
    if F.free_vars - set(xnames):
        raise DimensionError(f"F must depend on {xnames} only, got {sorted(F.free_vars)}")
    eta = cutoff.expr(F).root if cutoff is not None else None
    pieces = {}
    for pat, exprs in perturbation.pieces.items():
        comps = []
        for i, e in enumerate(exprs):
            g = Diff(F.root, xnames[i])
            if eta is not None:
                g = Binary("*", eta, g)
            comps.append(Expr(Binary("+", g, e.root)))
        pieces[pat] = comps
    return PiecewiseSmoothField(m, perturbation.surfaces, pieces,
                                meta={"model": "potential", "F": F})


# ---------------------------------------------------------------------------
# config layer
# ---------------------------------------------------------------------------

@dataclass
class Model:
    kind: str
    field: PiecewiseSmoothField
    params: object = None
    F: object = None
    c: float = None
    extra: dict = dc_field(default_factory=dict)


_PENDULUM_KEYS = {"model", "K", "omega", "Phi", "K_star", "Phi_star", "eps", "psi_star",
                  "t_window"}
_POTENTIAL_KEYS = {"model", "F", "c", "c_outer", "perturbation"}
_FIELD_KEYS = {"model", "dim", "surfaces", "pieces", "surface_tol"}


def _reject_unknown(section, allowed, where):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def model_from_config(section):
    """Build a :class:`Model` from the ``model`` section of a run config."""
    if not isinstance(section, dict) or "model" not in section:
        raise ConfigError("model section must be an object with a 'model' key")
    kind = section["model"]
    if kind == "pendulum":
        _reject_unknown(section, _PENDULUM_KEYS, "model")
        kw = {k: section[k] for k in section if k != "model"}
        for k in ("K", "omega", "Phi"):
            if k in kw:
                kw[k] = str(kw[k])
        if "t_window" in kw:
            kw["t_window"] = tuple(kw["t_window"])
        params = PendulumParams(**kw)
        fld = build_pendulum(params)
        return Model("pendulum", fld, params=params, F=as_expr("x1^2"),
                     c=params.psi_star ** 2)
    if kind == "potential":
        _reject_unknown(section, _POTENTIAL_KEYS, "model")
        for key in ("F", "c", "c_outer"):
            if key not in section:
                raise ConfigError(f"potential model needs {key!r}")
        pert = section.get("perturbation", {"dim": 1, "surfaces": [], "pieces": [{"signs": "", "f": ["0"]}]})
        pfield = assemble_field(pert)
        cut = CutoffSpec(float(section["c"]), float(section["c_outer"]))
        fld = build_potential_system(section["F"], pfield, cut)
        return Model("potential", fld, F=fld.meta["F"], c=float(section["c"]),
                     extra={"cutoff": cut})
    if kind == "field":
        _reject_unknown(section, _FIELD_KEYS, "model")
        fld = assemble_field({k: v for k, v in section.items() if k != "model"})
        return Model("field", fld)
    raise ConfigError(f"unknown model kind {kind!r}")
