"""Signed log-sum-exp fields over two groups of linear terms.

A model is a list of linear terms l_i(x) = <a_i, x> + c_i, each carrying a
positive weight s_i (stored as log s_i) and a group tag: Plus terms enter the
field with sign +1, Minus terms with sign -1.  The smooth field is evaluated
in the augmented two-group form

    F(x) = (1/beta+) * log sum_{i in Plus}  exp(beta+ * l_i(x) + log s_i)
         - (1/beta-) * log sum_{i in Minus} exp(beta- * l_i(x) + log s_i)

which has the same zero set as the signed sum of exponentials while staying
inside real log space.  Each group's log-sum-exp is computed with the usual
max-subtraction trick, so only differences of logits are ever exponentiated.

The piecewise-linear limit of F as both betas grow is the tropical field

    f(x) = max_{i in Plus} l_i(x) - max_{i in Minus} l_i(x)

where s and beta drop out.  An empty group contributes log(0) = -inf to its
side, so a model whose Minus group is empty evaluates to +inf everywhere
(sign positive, zero set empty); both evaluators follow that convention.

Terms marked inactive are skipped by every sum in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput, NonFiniteParameter

Array = np.ndarray

PLUS = 1
MINUS = -1

# Direction used for the weight-normalized form of an exactly zero direction
# vector: a = g * v/|v| with g = 0 needs some unit v to stay well defined.
_ZERO_DIRECTION_AXIS = 0


@dataclass
class LinearTerm:
    """One linear piece l(x) = <a, x> + c with sign group and pruning weight."""

    a: Array
    c: float
    group: int
    s: float = 1.0
    active: bool = True

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 1:
            raise DimensionMismatch(f"term direction must be a vector, got shape {self.a.shape}")
        if self.group not in (PLUS, MINUS):
            raise ValueError(f"group must be PLUS (+1) or MINUS (-1), got {self.group}")
        if not (self.s > 0.0):
            raise ValueError(f"term weight s must be positive, got {self.s}")


class PatchworkModel:
    """Struct-of-arrays container for the two-group field.

    Parameters are stored as flat arrays over all terms (both groups mixed,
    order preserved from construction): directions ``a`` (n, d), offsets
    ``c`` (n,), log weights ``log_s`` (n,), group tags ``group`` (n,) with
    values +1/-1, and an ``active`` mask.  When ``weightnorm`` is enabled the
    direction of term i is represented as a = g_i * v_i / |v_i| and ``a`` is
    kept materialized in sync with (g, v).
    """

    def __init__(self, dim: int, a: Array, c: Array, log_s: Array, group: Array,
                 active: Array, beta_plus: float, beta_minus: float,
                 weightnorm: bool = False, wn_g: Array | None = None,
                 wn_v: Array | None = None):
        self.dim = int(dim)
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.c = np.ascontiguousarray(c, dtype=np.float64)
        self.log_s = np.ascontiguousarray(log_s, dtype=np.float64)
        self.group = np.ascontiguousarray(group, dtype=np.int8)
        self.active = np.ascontiguousarray(active, dtype=bool)
        self.beta_plus = float(beta_plus)
        self.beta_minus = float(beta_minus)
        self.weightnorm = bool(weightnorm)
        self.wn_g = None if wn_g is None else np.ascontiguousarray(wn_g, dtype=np.float64)
        self.wn_v = None if wn_v is None else np.ascontiguousarray(wn_v, dtype=np.float64)
        self.validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_terms(cls, terms: Sequence[LinearTerm], beta_plus: float,
                   beta_minus: float, weightnorm: bool = False) -> "PatchworkModel":
        if len(terms) == 0:
            raise EmptyInput("a model needs at least one term")
        dim = terms[0].a.shape[0]
        a = np.stack([t.a for t in terms]).astype(np.float64)
        c = np.array([t.c for t in terms], dtype=np.float64)
        log_s = np.log(np.array([t.s for t in terms], dtype=np.float64))
        group = np.array([t.group for t in terms], dtype=np.int8)
        active = np.array([t.active for t in terms], dtype=bool)
        model = cls(dim, a, c, log_s, group, active, beta_plus, beta_minus)
        if weightnorm:
            model.enable_weightnorm()
        return model

    @classmethod
    def from_arrays(cls, a, c, group, beta_plus: float, beta_minus: float,
                    s=None, weightnorm: bool = False) -> "PatchworkModel":
        """Build a model straight from parameter arrays (s defaults to 1)."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        c = np.asarray(c, dtype=np.float64).ravel()
        n = a.shape[0]
        log_s = np.zeros(n) if s is None else np.log(np.asarray(s, dtype=np.float64).ravel())
        group = np.asarray(group, dtype=np.int8).ravel()
        model = cls(a.shape[1], a, c, log_s, group, np.ones(n, dtype=bool),
                    beta_plus, beta_minus)
        if weightnorm:
            model.enable_weightnorm()
        return model

    def validate(self):
        n = self.a.shape[0]
        if self.a.ndim != 2 or self.a.shape[1] != self.dim:
            raise DimensionMismatch(f"directions must have shape (n, {self.dim}), got {self.a.shape}")
        for name, arr, shape in (("c", self.c, (n,)), ("log_s", self.log_s, (n,)),
                                 ("group", self.group, (n,)), ("active", self.active, (n,))):
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} must have shape {shape}, got {arr.shape}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.c))
                and np.all(np.isfinite(self.log_s))):
            raise NonFiniteParameter("model parameters contain non-finite values")
        if not (self.beta_plus > 0.0 and self.beta_minus > 0.0
                and np.isfinite(self.beta_plus) and np.isfinite(self.beta_minus)):
            raise NonFiniteParameter(f"betas must be finite and positive, got {self.beta_plus}, {self.beta_minus}")
        if not np.all((self.group == PLUS) | (self.group == MINUS)):
            raise ValueError("group tags must be +1 or -1")
        if self.weightnorm:
            if self.wn_g is None or self.wn_v is None:
                raise NonFiniteParameter("weightnorm enabled but (g, v) missing")
            if self.wn_v.shape != self.a.shape or self.wn_g.shape != (n,):
                raise DimensionMismatch("weightnorm arrays must match the term layout")
            if not (np.all(np.isfinite(self.wn_g)) and np.all(np.isfinite(self.wn_v))):
                raise NonFiniteParameter("weightnorm parameters contain non-finite values")
            norms = np.linalg.norm(self.wn_v, axis=1)
            if np.any(norms <= 0.0):
                raise NonFiniteParameter("weightnorm direction vectors must be nonzero")

    # -- views -------------------------------------------------------------

    @property
    def n_terms(self) -> int:
        return self.a.shape[0]

    @property
    def s(self) -> Array:
        return np.exp(self.log_s)

    def term(self, i: int) -> LinearTerm:
        return LinearTerm(a=self.a[i].copy(), c=float(self.c[i]), group=int(self.group[i]),
                          s=float(np.exp(self.log_s[i])), active=bool(self.active[i]))

    @property
    def terms(self) -> list[LinearTerm]:
        return [self.term(i) for i in range(self.n_terms)]

    def group_indices(self, group: int, active_only: bool = True) -> Array:
        mask = self.group == group
        if active_only:
            mask &= self.active
        return np.flatnonzero(mask)

    def active_counts(self) -> tuple[int, int]:
        return (int(np.count_nonzero((self.group == PLUS) & self.active)),
                int(np.count_nonzero((self.group == MINUS) & self.active)))

    def copy(self) -> "PatchworkModel":
        return PatchworkModel(
            self.dim, self.a.copy(), self.c.copy(), self.log_s.copy(),
            self.group.copy(), self.active.copy(), self.beta_plus, self.beta_minus,
            self.weightnorm,
            None if self.wn_g is None else self.wn_g.copy(),
            None if self.wn_v is None else self.wn_v.copy())

    def with_betas(self, beta_plus: float, beta_minus: float | None = None) -> "PatchworkModel":
        out = self.copy()
        out.beta_plus = float(beta_plus)
        out.beta_minus = float(beta_plus if beta_minus is None else beta_minus)
        out.validate()
        return out

    def swapped(self) -> "PatchworkModel":
        """Groups exchanged, so inside and outside trade places: F -> -F."""
        out = self.copy()
        out.group = (-out.group).astype(np.int8)
        out.beta_plus, out.beta_minus = out.beta_minus, out.beta_plus
        return out

    # -- weight normalization ---------------------------------------------

    def enable_weightnorm(self):
        """Reparameterize every direction as a = g * v/|v| with g = |a|, v = a.

        A zero direction gets g = 0 and a fixed unit placeholder axis so the
        reconstruction stays exact and |v| > 0 holds.
        """
        g = np.linalg.norm(self.a, axis=1)
        v = self.a.copy()
        zero = g == 0.0
        if np.any(zero):
            v[zero] = 0.0
            v[zero, _ZERO_DIRECTION_AXIS] = 1.0
        self.wn_g = g
        self.wn_v = v
        self.weightnorm = True
        self._sync_a()

    def _sync_a(self):
        norms = np.linalg.norm(self.wn_v, axis=1, keepdims=True)
        self.a = np.ascontiguousarray(self.wn_g[:, None] * self.wn_v / norms)

    def set_weightnorm_params(self, g: Array, v: Array):
        if not self.weightnorm:
            raise ValueError("weightnorm is not enabled on this model")
        self.wn_g = np.ascontiguousarray(g, dtype=np.float64)
        self.wn_v = np.ascontiguousarray(v, dtype=np.float64)
        self._sync_a()


@dataclass
class FieldEval:
    """Field value, spatial gradient, and per-group softmax attributions.

    The softmax arrays are aligned with the model's term order restricted to
    each group (all terms of the group, inactive entries zero).  Streaming
    batch evaluation leaves them as None to keep auxiliary memory flat.
    """

    value: float
    grad_x: Array
    softmax_plus: Array | None = None
    softmax_minus: Array | None = None


def _check_point(model: PatchworkModel, x) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"point must have shape ({model.dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteParameter("query point contains non-finite values")
    return x


def _group_logits(model: PatchworkModel, x: Array, group: int) -> tuple[Array, Array, float]:
    """Logits beta*l_i + log s_i over the group's active terms.

    Returns (term indices, logits, beta).
    """
    idx = model.group_indices(group)
    beta = model.beta_plus if group == PLUS else model.beta_minus
    if idx.size == 0:
        return idx, np.empty(0), beta
    z = beta * (model.a[idx] @ x + model.c[idx]) + model.log_s[idx]
    return idx, z, beta


def eval_field(model: PatchworkModel, x) -> FieldEval:
    """Evaluate the smooth field and its spatial gradient at one point."""
    x = _check_point(model, x)
    model.validate()

    value = 0.0
    grad = np.zeros(model.dim)
    softmax = {}
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx, z, beta = _group_logits(model, x, group)
        w_full = np.zeros(np.count_nonzero(model.group == group))
        if idx.size == 0:
            value += sign * (-np.inf)
            softmax[group] = w_full
            continue
        zmax = z.max()
        e = np.exp(z - zmax)
        ssum = e.sum()
        w = e / ssum
        value += sign * (zmax + np.log(ssum)) / beta
        grad += sign * (w @ model.a[idx])
        # scatter into the group-wide vector (inactive terms stay zero)
        group_pos = np.cumsum(model.group == group) - 1
        w_full[group_pos[idx]] = w
        softmax[group] = w_full
    return FieldEval(value=float(value), grad_x=grad,
                     softmax_plus=softmax[PLUS], softmax_minus=softmax[MINUS])


def eval_tropical(model: PatchworkModel, x) -> float:
    """Evaluate the piecewise-linear limit max Plus - max Minus at one point."""
    x = _check_point(model, x)
    total = 0.0
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx = model.group_indices(group)
        if idx.size == 0:
            total += sign * (-np.inf)
            continue
        total += sign * np.max(model.a[idx] @ x + model.c[idx])
    return float(total)


def tropical_grad(model: PatchworkModel, x) -> tuple[float, Array]:
    """Tropical value and subgradient a_argmax(+) - a_argmax(-).

    Ties are broken toward the lowest term index within each group.
    """
    x = _check_point(model, x)
    value = 0.0
    grad = np.zeros(model.dim)
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx = model.group_indices(group)
        if idx.size == 0:
            value += sign * (-np.inf)
            continue
        vals = model.a[idx] @ x + model.c[idx]
        k = int(np.argmax(vals))
        value += sign * vals[k]
        grad += sign * model.a[idx[k]]
    return float(value), grad


def tropical_argmax(model: PatchworkModel, x) -> tuple[int, int]:
    """Indices (into the model's term list) of each group's maximizer at x."""
    x = _check_point(model, x)
    out = []
    for group in (PLUS, MINUS):
        idx = model.group_indices(group)
        if idx.size == 0:
            out.append(-1)
            continue
        vals = model.a[idx] @ x + model.c[idx]
        out.append(int(idx[np.argmax(vals)]))
    return out[0], out[1]


def eval_tropical_batch(model: PatchworkModel, points: Array) -> Array:
    """Vectorized tropical evaluation for an (m, d) array of points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise DimensionMismatch(f"points must have shape (m, {model.dim}), got {points.shape}")
    out = np.zeros(points.shape[0])
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx = model.group_indices(group)
        if idx.size == 0:
            out += sign * (-np.inf)
            continue
        out += sign * (points @ model.a[idx].T + model.c[idx]).max(axis=1)
    return out


@dataclass
class ParamGrads:
    """Gradient of the field value at one point w.r.t. every trainable parameter.

    Arrays are aligned with the model's full term order; rows of inactive
    terms are zero.  (d_g, d_v) are filled only when weightnorm is enabled.
    """

    d_a: Array
    d_c: Array
    d_log_s: Array
    d_g: Array | None = None
    d_v: Array | None = None


def grad_params(model: PatchworkModel, x) -> ParamGrads:
    """Analytic dF/d(a, c, log s) at one point, via the softmax attributions.

    For a Plus term: dF/dc_i = w_i, dF/da_i = w_i * x, dF/dlog s_i = w_i/beta+.
    Minus terms get the opposite sign.  With weightnorm enabled the direction
    gradient is chained into g and v: dF/dg = <dF/da, v_hat> and
    dF/dv = (g/|v|) * (dF/da - <dF/da, v_hat> v_hat).
    """
    x = _check_point(model, x)
    n, d = model.a.shape
    d_a = np.zeros((n, d))
    d_c = np.zeros(n)
    d_log_s = np.zeros(n)
    for group, sign in ((PLUS, 1.0), (MINUS, -1.0)):
        idx, z, beta = _group_logits(model, x, group)
        if idx.size == 0:
            continue
        e = np.exp(z - z.max())
        w = e / e.sum()
        d_c[idx] = sign * w
        d_a[idx] = sign * w[:, None] * x[None, :]
        d_log_s[idx] = sign * w / beta
    if not model.weightnorm:
        return ParamGrads(d_a=d_a, d_c=d_c, d_log_s=d_log_s)
    vnorm = np.linalg.norm(model.wn_v, axis=1, keepdims=True)
    vhat = model.wn_v / vnorm
    radial = np.sum(d_a * vhat, axis=1)
    d_g = radial
    d_v = (model.wn_g[:, None] / vnorm) * (d_a - radial[:, None] * vhat)
    return ParamGrads(d_a=d_a, d_c=d_c, d_log_s=d_log_s, d_g=d_g, d_v=d_v)


def eval_field_batch_streaming(model: PatchworkModel, points: Array,
                               reduce: Callable | None = None, init=None,
                               block_size: int = 1024, term_chunk: int = 128):
    """Evaluate the field (value and gradient) for m points in Theta(m) memory.

    Points are processed in fixed-size blocks; within a block the terms are
    streamed in fixed-size chunks with two passes per group: pass one keeps a
    running maximum of the logits, pass two accumulates shifted exponential
    sums and gradient numerators.  No buffer of shape (n, m) is ever created;
    auxiliary allocations are bounded by block_size * term_chunk regardless
    of the term count.

    Without a callback, returns (values, grads) with shapes (m,) and (m, d).
    With ``reduce``, it is folded as acc = reduce(acc, index, FieldEval)
    per point (softmax fields None) starting from ``init``, and the final
    accumulator is returned.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise DimensionMismatch(f"points must have shape (m, {model.dim}), got {points.shape}")
    model.validate()
    m, d = points.shape
    idx_p = model.group_indices(PLUS)
    idx_m = model.group_indices(MINUS)

    collect = reduce is None
    if collect:
        values = np.empty(m)
        grads = np.empty((m, d))
    acc = init

    for start in range(0, m, block_size):
        X = points[start:start + block_size]
        b = X.shape[0]
        side = {}
        for group, idx, beta in ((PLUS, idx_p, model.beta_plus), (MINUS, idx_m, model.beta_minus)):
            if idx.size == 0:
                side[group] = (np.full(b, -np.inf), np.zeros((b, d)))
                continue
            zmax = np.full(b, -np.inf)
            for t0 in range(0, idx.size, term_chunk):
                sub = idx[t0:t0 + term_chunk]
                z = beta * (X @ model.a[sub].T + model.c[sub]) + model.log_s[sub]
                np.maximum(zmax, z.max(axis=1), out=zmax)
            ssum = np.zeros(b)
            gnum = np.zeros((b, d))
            for t0 in range(0, idx.size, term_chunk):
                sub = idx[t0:t0 + term_chunk]
                z = beta * (X @ model.a[sub].T + model.c[sub]) + model.log_s[sub]
                e = np.exp(z - zmax[:, None])
                ssum += e.sum(axis=1)
                gnum += e @ model.a[sub]
            side[group] = ((zmax + np.log(ssum)) / beta, gnum / ssum[:, None])
        vals = side[PLUS][0] - side[MINUS][0]
        grd = side[PLUS][1] - side[MINUS][1]
        if collect:
            values[start:start + b] = vals
            grads[start:start + b] = grd
        else:
            for j in range(b):
                acc = reduce(acc, start + j, FieldEval(value=float(vals[j]), grad_x=grd[j]))
    if collect:
        return values, grads
    return acc


def batch_values(model: PatchworkModel, points: Array, engine: str = "auto") -> Array:
    """Field values for an (m, d) batch.  engine: auto | numba | numpy."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise DimensionMismatch(f"points must have shape (m, {model.dim}), got {points.shape}")
    if engine != "numpy":
        try:
            from . import _kernels
            return _kernels.field_values(model, points)
        except ImportError:
            if engine == "numba":
                raise
    values, _ = eval_field_batch_streaming(model, points)
    return values


def batch_values_grads(model: PatchworkModel, points: Array, engine: str = "auto") -> tuple[Array, Array]:
    """Field values and spatial gradients for an (m, d) batch."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise DimensionMismatch(f"points must have shape (m, {model.dim}), got {points.shape}")
    if engine != "numpy":
        try:
            from . import _kernels
            return _kernels.field_values_grads(model, points)
        except ImportError:
            if engine == "numba":
                raise
    return eval_field_batch_streaming(model, points)
