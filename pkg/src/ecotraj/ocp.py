"""Discretised horizon problems for the longitudinal planner.

Decision arrays ``S, V, U, A, B`` (distance, speed, traction, apparent
acceleration, brake) have ``N + 1`` entries each and are stored step-major:
variable ``k`` of step ``i`` sits at ``i * nv + k``. That ordering keeps the
kinematic coupling between neighbouring steps inside a narrow band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .fuel_model import FuelCoefficients, fuel_rate_hat, fuel_rate_hat_derivatives
from .vehicle import DerivedCoeffs, VehicleParams

ACC_MARGIN = 1e-6

QP_VARS = ("S", "V", "A")
FULL_VARS = ("S", "V", "U", "A", "B")


@dataclass(frozen=True)
class HorizonSpec:
    n_steps: int
    dt: float = 0.1
    time_headway: float = 1.5
    d_min: float = 10.0
    d_max: float = 100.0
    d_init: float = 50.0
    w1: float = 0.1
    w2: float = 2.0
    w3: float = 0.0
    v_max: float = 30.0
    a_v_max: float = 2.0
    b_max: float = 5.0
    u_max: float = 3.0
    use_slope_prediction: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if not (self.w1 > 0 and self.w2 > 0 and self.w3 >= 0):
            raise ValueError("need w1 > 0, w2 > 0, w3 >= 0")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @classmethod
    def from_vehicle(cls, params: VehicleParams, n_steps: int, **kw) -> "HorizonSpec":
        return cls(
            n_steps=n_steps,
            v_max=params.v_max,
            a_v_max=params.a_v_max,
            b_max=params.b_max,
            u_max=params.u_max,
            **kw,
        )


@dataclass(frozen=True)
class Layout:
    names: tuple[str, ...]
    n_steps: int

    @property
    def nv(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return self.nv * (self.n_steps + 1)

    def idx(self, name: str) -> np.ndarray:
        k = self.names.index(name)
        return np.arange(self.n_steps + 1) * self.nv + k

    def split(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x)
        return {n: x[self.idx(n)] for n in self.names}

    def join(self, **arrays) -> np.ndarray:
        x = np.zeros(self.size)
        for n, arr in arrays.items():
            x[self.idx(n)] = arr
        return x


@dataclass(frozen=True, eq=False)
class ConstraintBlock:
    """Linear rows ``lower <= M x <= upper`` over a layout."""

    name: str
    matrix: sp.csr_matrix
    lower: np.ndarray
    upper: np.ndarray

    @property
    def is_equality(self) -> bool:
        return bool(np.all(self.lower == self.upper))

    @property
    def inequality_count(self) -> int:
        """One-sided inequalities represented (two per finite two-sided row)."""
        if self.is_equality:
            return 0
        return int(np.isfinite(self.lower).sum() + np.isfinite(self.upper).sum())

    def evaluate(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float)

    def violation(self, x) -> np.ndarray:
        r = self.evaluate(x)
        return np.maximum(np.maximum(self.lower - r, r - self.upper), 0.0)


def _rows(layout: Layout, entries, n_rows: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, c, v in entries:
        rows.append(np.broadcast_to(r, np.shape(c)))
        cols.append(c)
        vals.append(np.broadcast_to(v, np.shape(c)))
    return sp.csr_matrix(
        (np.concatenate(vals).astype(float), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, layout.size),
    )


def build_acc_constraints(s_lead, spec: HorizonSpec, layout: Layout | None = None) -> ConstraintBlock:
    """Headway gap kept inside ``(d_min, d_max)`` at every step.

    With ``gap = S_l - (S + t_h V)`` the row is ``S + t_h V`` bounded by
    ``S_l - d_max + eps`` and ``S_l - d_min - eps``.
    """
    layout = layout or Layout(QP_VARS, spec.n_steps)
    s_lead = np.asarray(s_lead, dtype=float)
    if s_lead.shape != (spec.n_steps + 1,):
        raise ValueError("leading distance array must have n_steps + 1 entries")
    rows = np.arange(spec.n_steps + 1)
    m = _rows(layout, [(rows, layout.idx("S"), 1.0), (rows, layout.idx("V"), spec.time_headway)], len(rows))
    return ConstraintBlock(
        "acc",
        m,
        s_lead - spec.d_max + ACC_MARGIN,
        s_lead - spec.d_min - ACC_MARGIN,
    )


def headway_gap(s_lead, s, v, time_headway: float):
    return np.asarray(s_lead) - (np.asarray(s) + time_headway * np.asarray(v))


def build_kinematic_constraints(spec: HorizonSpec, layout: Layout | None = None) -> ConstraintBlock:
    """``S[i+1] = S[i] + V[i] dt + A[i] dt^2 / 2`` and ``V[i+1] = V[i] + A[i] dt``."""
    layout = layout or Layout(QP_VARS, spec.n_steps)
    n, dt = spec.n_steps, spec.dt
    S, V, A = layout.idx("S"), layout.idx("V"), layout.idx("A")
    r = np.arange(n)
    entries = [
        (r, S[1:], 1.0), (r, S[:-1], -1.0), (r, V[:-1], -dt), (r, A[:-1], -0.5 * dt * dt),
        (n + r, V[1:], 1.0), (n + r, V[:-1], -1.0), (n + r, A[:-1], -dt),
    ]
    m = _rows(layout, entries, 2 * n)
    z = np.zeros(2 * n)
    return ConstraintBlock("kinematic", m, z, z.copy())


def build_initial_constraints(s0: float, v0: float, layout: Layout) -> ConstraintBlock:
    m = _rows(layout, [(0, layout.idx("S")[:1], 1.0), (1, layout.idx("V")[:1], 1.0)], 2)
    b = np.array([s0, v0], dtype=float)
    return ConstraintBlock("initial", m, b, b.copy())


def build_bounds(spec: HorizonSpec, layout: Layout) -> ConstraintBlock:
    limits = {
        "V": (0.0, spec.v_max),
        "A": (-spec.b_max, spec.a_v_max),
        "U": (0.0, spec.u_max),
        "B": (0.0, spec.b_max),
    }
    names = [n for n in layout.names if n in limits]
    entries, lo, hi = [], [], []
    row = 0
    for n in names:
        ids = layout.idx(n)
        entries.append((row + np.arange(len(ids)), ids, 1.0))
        lo.append(np.full(len(ids), limits[n][0]))
        hi.append(np.full(len(ids), limits[n][1]))
        row += len(ids)
    return ConstraintBlock("bounds", _rows(layout, entries, row), np.concatenate(lo), np.concatenate(hi))


@dataclass(frozen=True, eq=False)
class DynamicConstraints:
    """``U = A + R(V, G) + B`` with ``R = k1 V^2 + k2 cos G + k3 sin G``."""

    grade: np.ndarray
    coeffs: DerivedCoeffs

    @property
    def count(self) -> int:
        return len(self.grade)

    def resistance(self, v):
        g = self.grade
        return self.coeffs.k1 * np.square(v) + self.coeffs.k2 * np.cos(g) + self.coeffs.k3 * np.sin(g)

    def resistance_derivatives(self, v):
        """``(dR/dV, d2R/dV2)`` per step; grade is data, not a variable."""
        v = np.asarray(v, dtype=float)
        return 2.0 * self.coeffs.k1 * v, np.full(v.shape, 2.0 * self.coeffs.k1)

    def residual(self, v, u, a, b) -> np.ndarray:
        return np.asarray(u) - (np.asarray(a) + self.resistance(v) + np.asarray(b))

    def residual_jacobian(self, v) -> dict[str, np.ndarray]:
        """Diagonal entries of the residual Jacobian per variable (step ``i`` only touches step ``i``)."""
        dr, _ = self.resistance_derivatives(v)
        one = np.ones(self.count)
        return {"V": -dr, "U": one, "A": -one, "B": -one}

    def residual_hessian_vv(self, v) -> np.ndarray:
        """Only non-zero second derivative of each residual row."""
        return -self.resistance_derivatives(v)[1]

    def linear_resistance(self, v, v_ref):
        """First-order expansion of ``R`` in ``V`` around ``v_ref``."""
        k1 = self.coeffs.k1
        g = self.grade
        return k1 * (v_ref**2 + 2 * v_ref * (v - v_ref)) + self.coeffs.k2 * np.cos(g) + self.coeffs.k3 * np.sin(g)

    def linearized(self, v_ref, layout: Layout) -> ConstraintBlock:
        """Rows ``U - A - B - 2 k1 v_ref V = -k1 v_ref^2 + k2 cos G + k3 sin G``."""
        v_ref = np.asarray(v_ref, dtype=float)
        n = self.count
        r = np.arange(n)
        k1 = self.coeffs.k1
        entries = [
            (r, layout.idx("U"), 1.0),
            (r, layout.idx("A"), -1.0),
            (r, layout.idx("B"), -1.0),
            (r, layout.idx("V"), -2.0 * k1 * v_ref),
        ]
        m = _rows(layout, entries, n)
        rhs = -k1 * v_ref**2 + self.coeffs.k2 * np.cos(self.grade) + self.coeffs.k3 * np.sin(self.grade)
        return ConstraintBlock("dynamic", m, rhs, rhs.copy())


def build_dynamic_constraints(grade, coeffs: DerivedCoeffs, spec: HorizonSpec) -> DynamicConstraints:
    grade = np.asarray(grade, dtype=float)
    if grade.shape != (spec.n_steps + 1,):
        raise ValueError("grade array must have n_steps + 1 entries")
    return DynamicConstraints(grade, coeffs)


@dataclass(frozen=True, eq=False)
class QPData:
    """``min 1/2 x'Px + q'x + constant`` subject to ``l <= Cx <= u``."""

    P: sp.csc_matrix
    q: np.ndarray
    C: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    constant: float = 0.0
    blocks: tuple[tuple[str, int, int], ...] = ()

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.constant)

    def scaled(self, factor: float) -> "QPData":
        return replace(self, P=(self.P * factor).tocsc(), q=self.q * factor, constant=self.constant * factor)

    def to_json(self) -> str:
        def trip(mat):
            c = mat.tocoo()
            return {"shape": list(c.shape), "row": c.row.tolist(), "col": c.col.tolist(), "val": c.data.tolist()}

        inf = lambda a: [None if not np.isfinite(x) else float(x) for x in a]  # noqa: E731
        return json.dumps(
            {
                "P": trip(self.P),
                "q": self.q.tolist(),
                "C": trip(self.C),
                "l": inf(self.l),
                "u": inf(self.u),
                "constant": self.constant,
                "blocks": [list(b) for b in self.blocks],
            }
        )


def stack_blocks(blocks: list[ConstraintBlock]):
    C = sp.vstack([b.matrix for b in blocks]).tocsc()
    l = np.concatenate([b.lower for b in blocks])
    u = np.concatenate([b.upper for b in blocks])
    spans, row = [], 0
    for b in blocks:
        spans.append((b.name, row, row + b.matrix.shape[0]))
        row += b.matrix.shape[0]
    return C, l, u, tuple(spans)


@dataclass(frozen=True, eq=False)
class HorizonProblem:
    kind: str  # "QP" | "SQP-subproblem" | "NLP"
    spec: HorizonSpec
    layout: Layout
    x0: np.ndarray  # ego state [s, v, u, a_V, a_B]
    s_lead: np.ndarray
    v_lead: np.ndarray
    constraints: tuple[ConstraintBlock, ...]
    grade: np.ndarray | None = None
    dynamics: DynamicConstraints | None = None
    fuel: FuelCoefficients | None = None
    v_ref: np.ndarray | None = None
    u_ref: np.ndarray | None = None
    qp: QPData | None = None
    meta: dict = field(default_factory=dict)

    def block(self, name: str) -> ConstraintBlock:
        for b in self.constraints:
            if b.name == name:
                return b
        raise KeyError(name)

    def constraint_counts(self) -> dict[str, int]:
        counts = {
            "acc": self.block("acc").inequality_count,
            "kinematic": self.block("kinematic").matrix.shape[0],
            "initial": self.block("initial").matrix.shape[0],
        }
        counts["dynamic"] = self.dynamics.count if self.dynamics is not None else 0
        return counts

    def referenced_terms(self) -> set[str]:
        """Decision arrays and data the problem depends on (structural check)."""
        terms = set(self.layout.names) | {"S_l", "V_l"}
        if self.grade is not None:
            terms.add("G")
        if self.fuel is not None:
            terms.add("F")
        return terms

    def objective(self, arrays: dict) -> float:
        """True objective at arrays ``S, V, A`` (+ ``U, B`` for fuel-aware kinds)."""
        sp_ = self.spec
        v, a = np.asarray(arrays["V"]), np.asarray(arrays["A"])
        val = sp_.w1 * np.sum((self.v_lead - v) ** 2) + sp_.w2 * np.sum(a**2)
        if self.kind == "QP":
            return float(val)
        b, u = np.asarray(arrays["B"]), np.asarray(arrays["U"])
        val += sp_.w2 * np.sum(b**2)
        if sp_.w3:
            val += sp_.w3 * np.sum(fuel_rate_hat(v, u, self.fuel))
        return float(val)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "n_steps": self.spec.n_steps,
            "variables": list(self.layout.names),
            "x0": self.x0.tolist(),
            "s_lead": self.s_lead.tolist(),
            "v_lead": self.v_lead.tolist(),
            "grade": None if self.grade is None else self.grade.tolist(),
        }
        if self.qp is not None:
            doc["qp"] = json.loads(self.qp.to_json())
        return json.dumps(doc)


def _check_lengths(spec, *arrays):
    for a in arrays:
        if a is not None and np.shape(a) != (spec.n_steps + 1,):
            raise ValueError(f"horizon arrays must have n_steps + 1 = {spec.n_steps + 1} entries")


def build_qp(x0, s_lead, v_lead, spec: HorizonSpec) -> HorizonProblem:
    """Fuel-agnostic tracking QP over ``(S, V, A)``.

    Objective ``w1 |V_l - V|^2 + w2 |A|^2``; grade, traction and brake do not
    enter this problem at all.
    """
    x0 = np.asarray(x0, dtype=float)
    s_lead = np.asarray(s_lead, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    _check_lengths(spec, s_lead, v_lead)
    layout = Layout(QP_VARS, spec.n_steps)
    blocks = (
        build_initial_constraints(x0[0], x0[1], layout),
        build_kinematic_constraints(spec, layout),
        build_acc_constraints(s_lead, spec, layout),
        build_bounds(spec, layout),
    )
    diag = layout.join(V=np.full(spec.n_steps + 1, 2 * spec.w1), A=np.full(spec.n_steps + 1, 2 * spec.w2))
    P = sp.diags(diag).tocsc()
    q = layout.join(V=-2 * spec.w1 * v_lead)
    C, l, u, spans = stack_blocks(list(blocks))
    qp = QPData(P, q, C, l, u, float(spec.w1 * np.sum(v_lead**2)), spans)
    return HorizonProblem("QP", spec, layout, x0, s_lead, v_lead, blocks, qp=qp)


def build_nlp(x0, s_lead, v_lead, grade, coeffs: DerivedCoeffs, fuel: FuelCoefficients, spec: HorizonSpec) -> HorizonProblem:
    """Fuel-aware problem over ``(S, V, U, A, B)`` with exact dynamics.

    Objective ``w1 |V_l - V|^2 + w2 |A|^2 + w2 |B|^2 + w3 sum F(V, U)``. The
    fuel 1-norm is taken as a plain sum, valid while the model stays
    non-negative on the trajectory (checked after solving).
    """
    x0 = np.asarray(x0, dtype=float)
    s_lead = np.asarray(s_lead, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    grade = np.asarray(grade, dtype=float)
    _check_lengths(spec, s_lead, v_lead, grade)
    layout = Layout(FULL_VARS, spec.n_steps)
    blocks = (
        build_initial_constraints(x0[0], x0[1], layout),
        build_kinematic_constraints(spec, layout),
        build_acc_constraints(s_lead, spec, layout),
        build_bounds(spec, layout),
    )
    dyn = build_dynamic_constraints(grade, coeffs, spec)
    return HorizonProblem("NLP", spec, layout, x0, s_lead, v_lead, blocks, grade=grade, dynamics=dyn, fuel=fuel)


@dataclass(frozen=True)
class FuelExpansion:
    """Second-order expansion of the per-step fuel rate around a reference.

    ``h_vv, h_vu, h_uu`` are the projected (positive semidefinite) Hessian
    entries actually used in the subproblem; ``raw`` keeps the exact ones.
    """

    v_ref: np.ndarray
    u_ref: np.ndarray
    f0: np.ndarray
    g_v: np.ndarray
    g_u: np.ndarray
    h_vv: np.ndarray
    h_vu: np.ndarray
    h_uu: np.ndarray
    raw: tuple[np.ndarray, np.ndarray, np.ndarray]

    def value(self, v, u) -> np.ndarray:
        dv = np.asarray(v) - self.v_ref
        du = np.asarray(u) - self.u_ref
        return (
            self.f0 + self.g_v * dv + self.g_u * du
            + 0.5 * self.h_vv * dv**2 + self.h_vu * dv * du + 0.5 * self.h_uu * du**2
        )

    def exact_value(self, v, u) -> np.ndarray:
        """Unprojected Taylor polynomial as written (no PSD clipping)."""
        f_vv, f_vu, f_uu = self.raw
        dv = np.asarray(v) - self.v_ref
        du = np.asarray(u) - self.u_ref
        return self.f0 + self.g_v * dv + self.g_u * du + f_vu * dv * du + 0.5 * f_uu * du**2 + 0.5 * f_vv * dv**2


def project_psd_2x2(a, b, c):
    """Clip negative eigenvalues of ``[[a, b], [b, c]]`` (element-wise batches) to zero."""
    H = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    w, Q = np.linalg.eigh(H)
    w = np.maximum(w, 0.0)
    Hp = (Q * w[..., None, :]) @ np.swapaxes(Q, -1, -2)
    return Hp[..., 0, 0], Hp[..., 0, 1], Hp[..., 1, 1]


def fuel_expansion(v_ref, u_ref, fuel: FuelCoefficients) -> FuelExpansion:
    v_ref = np.asarray(v_ref, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    f0 = fuel_rate_hat(v_ref, u_ref, fuel)
    f_v, f_u, f_vv, f_uu, f_vu = fuel_rate_hat_derivatives(v_ref, u_ref, fuel)
    h_vv, h_vu, h_uu = project_psd_2x2(f_vv, f_vu, f_uu)
    return FuelExpansion(v_ref, u_ref, f0, f_v, f_u, h_vv, h_vu, h_uu, (f_vv, f_vu, f_uu))


def build_sqp_subproblem(
    x0, s_lead, v_lead, grade, coeffs: DerivedCoeffs, fuel: FuelCoefficients, v_ref, u_ref, spec: HorizonSpec
) -> HorizonProblem:
    """Convex QP approximation of the fuel-aware problem around ``(v_ref, u_ref)``.

    Fuel is replaced by its PSD-projected quadratic expansion and the drag
    term of the dynamics by its tangent at ``v_ref``.
    """
    x0 = np.asarray(x0, dtype=float)
    s_lead = np.asarray(s_lead, dtype=float)
    v_lead = np.asarray(v_lead, dtype=float)
    grade = np.asarray(grade, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    _check_lengths(spec, s_lead, v_lead, grade, v_ref, u_ref)
    layout = Layout(FULL_VARS, spec.n_steps)
    dyn = build_dynamic_constraints(grade, coeffs, spec)
    blocks = (
        build_initial_constraints(x0[0], x0[1], layout),
        build_kinematic_constraints(spec, layout),
        build_acc_constraints(s_lead, spec, layout),
        dyn.linearized(v_ref, layout),
        build_bounds(spec, layout),
    )
    n1 = spec.n_steps + 1
    w1, w2, w3 = spec.w1, spec.w2, spec.w3
    ex = fuel_expansion(v_ref, u_ref, fuel)
    iV, iU = layout.idx("V"), layout.idx("U")
    diag = layout.join(
        V=2 * w1 + w3 * ex.h_vv,
        U=w3 * ex.h_uu,
        A=np.full(n1, 2 * w2),
        B=np.full(n1, 2 * w2),
    )
    off = sp.coo_matrix((w3 * ex.h_vu, (iV, iU)), shape=(layout.size, layout.size))
    P = (sp.diags(diag) + off + off.T).tocsc()
    # linear term of w3 * [f0 + g (x - r) + 1/2 (x - r)' H (x - r)]
    q_v = -2 * w1 * v_lead + w3 * (ex.g_v - ex.h_vv * v_ref - ex.h_vu * u_ref)
    q_u = w3 * (ex.g_u - ex.h_vu * v_ref - ex.h_uu * u_ref)
    q = layout.join(V=q_v, U=q_u)
    const = w1 * np.sum(v_lead**2) + w3 * np.sum(
        ex.f0 - ex.g_v * v_ref - ex.g_u * u_ref
        + 0.5 * ex.h_vv * v_ref**2 + ex.h_vu * v_ref * u_ref + 0.5 * ex.h_uu * u_ref**2
    )
    C, l, u, spans = stack_blocks(list(blocks))
    qp = QPData(P, q, C, l, u, float(const), spans)
    return HorizonProblem(
        "SQP-subproblem", spec, layout, x0, s_lead, v_lead, blocks,
        grade=grade, dynamics=dyn, fuel=fuel, v_ref=v_ref, u_ref=u_ref, qp=qp,
        meta={"expansion": ex},
    )


@dataclass(frozen=True)
class ResidualReport:
    acc_violation: float
    kinematic_residual: float
    dynamic_residual: float
    bound_violation: float
    initial_residual: float
    min_fuel: float = float("nan")

    def feasible(self, acc_tol=1e-6, kin_tol=1e-8, dyn_tol=1e-6, bound_tol=1e-6) -> bool:
        return (
            self.acc_violation <= acc_tol
            and self.kinematic_residual <= kin_tol
            and self.dynamic_residual <= dyn_tol
            and self.bound_violation <= bound_tol
            and self.initial_residual <= kin_tol
        )


def check_solution(problem: HorizonProblem, arrays: dict) -> ResidualReport:
    """Constraint residuals recomputed directly from the arrays.

    Deliberately independent of any solver internals: it uses the plain
    kinematic, headway and resistance formulas.
    """
    spec = problem.spec
    dt = spec.dt
    S, V, A = (np.asarray(arrays[k], dtype=float) for k in ("S", "V", "A"))
    kin = max(
        np.max(np.abs(S[1:] - S[:-1] - V[:-1] * dt - 0.5 * A[:-1] * dt * dt)),
        np.max(np.abs(V[1:] - V[:-1] - A[:-1] * dt)),
    )
    gap = headway_gap(problem.s_lead, S, V, spec.time_headway)
    acc = float(np.max(np.maximum(np.maximum(spec.d_min - gap, gap - spec.d_max), 0.0)))
    bnd = [np.maximum(-V, 0), np.maximum(V - spec.v_max, 0), np.maximum(-spec.b_max - A, 0), np.maximum(A - spec.a_v_max, 0)]
    dyn = 0.0
    min_fuel = float("nan")
    if "U" in arrays and problem.grade is not None:
        U, B = np.asarray(arrays["U"], dtype=float), np.asarray(arrays["B"], dtype=float)
        k = problem.dynamics.coeffs
        G = problem.grade
        R = k.k1 * V**2 + k.k2 * np.cos(G) + k.k3 * np.sin(G)
        dyn = float(np.max(np.abs(U - A - R - B)))
        bnd += [np.maximum(-U, 0), np.maximum(U - spec.u_max, 0), np.maximum(-B, 0), np.maximum(B - spec.b_max, 0)]
        if problem.fuel is not None:
            min_fuel = float(np.min(fuel_rate_hat(V, U, problem.fuel)))
    init = max(abs(S[0] - problem.x0[0]), abs(V[0] - problem.x0[1]))
    return ResidualReport(
        acc_violation=acc,
        kinematic_residual=float(kin),
        dynamic_residual=dyn,
        bound_violation=float(max(np.max(b) for b in bnd)),
        initial_residual=float(init),
        min_fuel=min_fuel,
    )
