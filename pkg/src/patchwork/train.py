"""Fitting loop: losses, Adam with weight normalization, progressive pruning.

The total objective is the unweighted sum of four parts evaluated on a
surface mini-batch and a fresh off-surface batch each iteration:

  surface   mean |F(x_j)|
  normal    mean (1 - cos(grad F(x_j), n_j))
  occupancy mean g_dw(sigmoid(-F(y_k)))^2 with the double-well g_dw
  prune     per group: mean of s_i plus mean ReLU(1 - sum_i s_i w_i(x_j))

where w are the softmax attributions already computed by the field
evaluation, treated as constants (gradients flow only into the explicit
s factors).  The slope vectors are weight-normalized, a = g * v/|v|, so
the optimizer sees separate magnitude and direction gradients.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dataclass_field, fields, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import EmptyInput, NonFiniteGradient
from .field import MINUS, PLUS, PatchworkModel, batch_values, batch_values_grads
from .init import OrientedSampleSet, geometric_init, random_init


@dataclass
class FitConfig:
    iterations: int = 10_000
    batch_size: int = 16_384
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    prune_interval: int = 2_000
    prune_threshold: float = 1e-2
    prune_disable_value: float = 1e-5
    rho: float = 200.0
    beta: float = 75.0
    rng_seed: int = 0
    # Ablation toggles.
    use_surface: bool = True
    use_normal: bool = True
    use_occupancy: bool = True
    use_prune: bool = True
    geometric: bool = True

    def validate(self):
        positive = ("iterations", "batch_size", "learning_rate", "adam_beta1",
                    "adam_beta2", "adam_eps", "prune_interval",
                    "prune_threshold", "prune_disable_value", "rho", "beta")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"FitConfig.{name} must be positive")
        if not self.prune_disable_value < self.prune_threshold:
            raise ValueError("prune_disable_value must be below prune_threshold")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown FitConfig keys: {sorted(unknown)}")
        return cls(**data).validate()

    def replace(self, **kw) -> "FitConfig":
        return replace(self, **kw).validate()

    def save(self, path) -> Path:
        """Human-editable JSON; load() restores an equal config."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "FitConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitReport:
    """Per-iteration telemetry of one fit run."""

    loss_sur: np.ndarray
    loss_normal: np.ndarray
    loss_reg: np.ndarray
    loss_prune: np.ndarray
    loss_total: np.ndarray
    active_terms: np.ndarray
    wall_time: float
    params_initial: int
    params_final: int
    skipped_steps: int
    degenerate_normal_samples: int
    prune_events: list = dataclass_field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.loss_total)

    def rows(self):
        """(iteration, sur, normal, reg, prune, total, active) tuples."""
        for i in range(self.iterations):
            yield (i, self.loss_sur[i], self.loss_normal[i], self.loss_reg[i],
                   self.loss_prune[i], self.loss_total[i],
                   int(self.active_terms[i]))


def parameter_count(model: PatchworkModel, *, initial: bool = False) -> int:
    """Size convention for reporting: each term costs dim+1 numbers (direction
    plus offset; s only steers pruning and is not counted), so a freshly
    initialized model with 2m terms in d=3 reports 8m.  A fitted model counts
    its active terms plus the two group sharpness values."""
    if initial:
        return (model.dim + 1) * model.n_terms
    return (model.dim + 1) * int(model.active.sum()) + 2


# ---------------------------------------------------------------------------
# losses (reference entry points; the fit loop uses the fused kernels)


def _as_batch(batch, dim):
    X = np.asarray(batch, dtype=np.float64)
    if X.size == 0:
        return X.reshape(0, dim)
    if X.ndim != 2 or X.shape[1] != dim:
        raise EmptyInput(f"batch must be (m, {dim})")
    return X


def loss_surface(model: PatchworkModel, batch) -> float:
    X = _as_batch(batch, model.dim)
    if not len(X):
        raise EmptyInput("surface batch is empty")
    return float(np.mean(np.abs(batch_values(model, X))))


def loss_normal(model: PatchworkModel, batch, normals) -> float:
    X = _as_batch(batch, model.dim)
    if not len(X):
        raise EmptyInput("surface batch is empty")
    U = np.asarray(normals, dtype=np.float64)
    if U.shape != X.shape:
        raise EmptyInput("normals must match the batch shape")
    _, g = batch_values_grads(model, X)
    gn = np.linalg.norm(g, axis=1)
    un = np.linalg.norm(U, axis=1)
    ok = gn >= 1e-12
    if not ok.any():
        return 0.0
    cos = np.sum(g[ok] * U[ok], axis=1) / (gn[ok] * un[ok])
    return float(np.mean(1.0 - cos))


def double_well(x):
    """Quartic-style well vanishing at 0 and 1, peaking at 1 in the middle."""
    u = np.asarray(x, dtype=np.float64) - 0.5
    return 4.0 * u * u - 4.0 * np.abs(u) + 1.0


def loss_occupancy(model: PatchworkModel, off_batch) -> float:
    Y = _as_batch(off_batch, model.dim)
    if not len(Y):
        return 0.0
    f = batch_values(model, Y)
    # sigmoid(-f), stable on both tails
    t = np.where(f >= 0, np.exp(-np.clip(f, 0, None)) / (1 + np.exp(-np.clip(f, 0, None))),
                 1.0 / (1 + np.exp(np.clip(f, None, 0))))
    return float(np.mean(double_well(t) ** 2))


def _group_softmax(model, X, group):
    idx = model.group_indices(group)
    beta = model.beta_plus if group == PLUS else model.beta_minus
    z = beta * (X @ model.a[idx].T + model.c[idx]) + model.log_s[idx]
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return idx, e / e.sum(axis=1, keepdims=True)


def loss_prune(model: PatchworkModel, batch) -> float:
    X = _as_batch(batch, model.dim)
    if not len(X):
        raise EmptyInput("surface batch is empty")
    total = 0.0
    for group in (PLUS, MINUS):
        idx, w = _group_softmax(model, X, group)
        s = np.exp(model.log_s[idx])
        total += float(s.mean())
        total += float(np.mean(np.maximum(1.0 - w @ s, 0.0)))
    return total


def sample_off_surface(bbox, m, rng) -> np.ndarray:
    if m < 1:
        raise EmptyInput("need at least one off-surface sample")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    bbox = np.asarray(bbox, dtype=np.float64)
    return rng.uniform(bbox[:, 0], bbox[:, 1], size=(m, bbox.shape[0]))


# ---------------------------------------------------------------------------
# gradients


@dataclass
class ParamGrads:
    """Gradients in full term order, zero on inactive terms."""

    a: np.ndarray
    c: np.ndarray
    log_s: np.ndarray

    def finite(self) -> bool:
        return bool(np.isfinite(self.a).all() and np.isfinite(self.c).all()
                    and np.isfinite(self.log_s).all())


def total_loss_and_grads(model: PatchworkModel, X, normals, Y, *,
                         use_surface=True, use_normal=True,
                         use_occupancy=True, use_prune=True):
    """Enabled loss values and their summed parameter gradients.

    Returns (losses dict, ParamGrads, degenerate_normal_count).  The
    gradients are with respect to (a, c, log s); the weight-norm chain
    is applied later by the optimizer step.
    """
    n = model.n_terms
    d = model.dim
    losses = {"sur": 0.0, "normal": 0.0, "reg": 0.0, "prune": 0.0}
    dA = np.zeros((n, d))
    dc = np.zeros(n)
    dls = np.zeros(n)
    skipped = 0

    idx_p = model.group_indices(PLUS)
    idx_m = model.group_indices(MINUS)
    if idx_p.size == 0 or idx_m.size == 0:
        raise EmptyInput("training needs at least one active term per group")

    if use_surface or use_normal or use_prune:
        X = _as_batch(X, d)
        if not len(X):
            raise EmptyInput("surface batch is empty")
        U = np.ascontiguousarray(np.asarray(normals, dtype=np.float64)) \
            if use_normal else np.zeros_like(X)
        sp_w = np.exp(model.log_s[idx_p])
        sm_w = np.exp(model.log_s[idx_m])
        (l_sur, l_norm_raw, valid, skipped, pr_p, pr_m,
         dAp, dcp, dlsp, dAm, dcm, dlsm,
         dApn, dcpn, dlspn, dAmn, dcmn, dlsmn) = _kernels._surface_kernel(
            np.ascontiguousarray(model.a[idx_p]),
            np.ascontiguousarray(model.c[idx_p]),
            np.ascontiguousarray(model.log_s[idx_p]), sp_w,
            np.ascontiguousarray(model.a[idx_m]),
            np.ascontiguousarray(model.c[idx_m]),
            np.ascontiguousarray(model.log_s[idx_m]), sm_w,
            model.beta_plus, model.beta_minus,
            np.ascontiguousarray(X), U,
            use_surface, use_normal, use_prune)
        if use_surface:
            losses["sur"] = float(l_sur)
            dA[idx_p] += dAp
            dc[idx_p] += dcp
            dls[idx_p] += dlsp
            dA[idx_m] += dAm
            dc[idx_m] += dcm
            dls[idx_m] += dlsm
        elif use_prune:
            # The kernel folds the prune hinge into the sur blocks; with
            # the surface loss off only the log-s part carries it.
            dls[idx_p] += dlsp
            dls[idx_m] += dlsm
        if use_normal and valid:
            inv = 1.0 / valid
            losses["normal"] = float(l_norm_raw) * inv
            dA[idx_p] += dApn * inv
            dc[idx_p] += dcpn * inv
            dls[idx_p] += dlspn * inv
            dA[idx_m] += dAmn * inv
            dc[idx_m] += dcmn * inv
            dls[idx_m] += dlsmn * inv
        if use_prune:
            s_term = float(sp_w.mean() + sm_w.mean())
            losses["prune"] = s_term + float(pr_p + pr_m)
            dls[idx_p] += sp_w / len(idx_p)
            dls[idx_m] += sm_w / len(idx_m)

    if use_occupancy:
        Y = _as_batch(Y, d)
        if len(Y):
            (l_reg, dAp, dcp, dlsp, dAm, dcm, dlsm) = _kernels._offsurface_kernel(
                np.ascontiguousarray(model.a[idx_p]),
                np.ascontiguousarray(model.c[idx_p]),
                np.ascontiguousarray(model.log_s[idx_p]),
                np.ascontiguousarray(model.a[idx_m]),
                np.ascontiguousarray(model.c[idx_m]),
                np.ascontiguousarray(model.log_s[idx_m]),
                model.beta_plus, model.beta_minus,
                np.ascontiguousarray(Y))
            losses["reg"] = float(l_reg)
            dA[idx_p] += dAp
            dc[idx_p] += dcp
            dls[idx_p] += dlsp
            dA[idx_m] += dAm
            dc[idx_m] += dcm
            dls[idx_m] += dlsm

    return losses, ParamGrads(dA, dc, dls), int(skipped)


def weightnorm_chain(model: PatchworkModel, dA):
    """Pull slope gradients back through a = g * v/|v|.

    Returns (dg, dv): dg = <dA, v_hat> and dv = (g/|v|)(dA - <dA,v_hat> v_hat),
    so magnitude and direction updates are decoupled.
    """
    vn = np.linalg.norm(model.wn_v, axis=1, keepdims=True)
    vhat = model.wn_v / vn
    dg = np.sum(dA * vhat, axis=1)
    dv = (model.wn_g[:, None] / vn) * (dA - dg[:, None] * vhat)
    return dg, dv


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers, one slot per trainable scalar."""

    def __init__(self, model: PatchworkModel):
        n, d = model.n_terms, model.dim
        self.t = 0
        if model.weightnorm:
            self.m_g = np.zeros(n)
            self.v_g = np.zeros(n)
            self.m_v = np.zeros((n, d))
            self.v_v = np.zeros((n, d))
        else:
            self.m_a = np.zeros((n, d))
            self.v_a = np.zeros((n, d))
        self.m_c = np.zeros(n)
        self.v_c = np.zeros(n)
        self.m_ls = np.zeros(n)
        self.v_ls = np.zeros(n)


def _adam_update(m, v, g, t, lr, b1, b2, eps):
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return lr * mhat / (np.sqrt(vhat) + eps)


def adam_step(model: PatchworkModel, grads: ParamGrads, state: AdamState,
              lr: float = 1e-3, *, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update on the active terms.

    beta+- are never trained.  Raises NonFiniteGradient (without touching
    the state) when any gradient entry on an active term is not finite.
    """
    mask = model.active
    if not (np.isfinite(grads.a[mask]).all()
            and np.isfinite(grads.c[mask]).all()
            and np.isfinite(grads.log_s[mask]).all()):
        raise NonFiniteGradient("non-finite loss gradient; step skipped")
    state.t += 1
    t = state.t
    fmask = mask[:, None]
    if model.weightnorm:
        dg, dv = weightnorm_chain(model, grads.a)
        dg = np.where(mask, dg, 0.0)
        dv = np.where(fmask, dv, 0.0)
        step_g = _adam_update(state.m_g, state.v_g, dg, t, lr, beta1, beta2, eps)
        step_v = _adam_update(state.m_v, state.v_v, dv, t, lr, beta1, beta2, eps)
        model.wn_g = model.wn_g - np.where(mask, step_g, 0.0)
        model.wn_v = model.wn_v - np.where(fmask, step_v, 0.0)
        model._sync_a()
    else:
        da = np.where(fmask, grads.a, 0.0)
        step_a = _adam_update(state.m_a, state.v_a, da, t, lr, beta1, beta2, eps)
        model.a = model.a - np.where(fmask, step_a, 0.0)
    dc = np.where(mask, grads.c, 0.0)
    dls = np.where(mask, grads.log_s, 0.0)
    model.c = model.c - np.where(mask, _adam_update(
        state.m_c, state.v_c, dc, t, lr, beta1, beta2, eps), 0.0)
    model.log_s = model.log_s - np.where(mask, _adam_update(
        state.m_ls, state.v_ls, dls, t, lr, beta1, beta2, eps), 0.0)
    return model, state


def prune_pass(model: PatchworkModel, threshold: float = 1e-2,
               disable_value: float = 1e-5) -> int:
    """Softly disable active terms whose weight fell below threshold.

    Disabled terms get s = disable_value, leave the optimizer's reach,
    and stop counting toward the prune loss.  The last active term of a
    group survives even below threshold.
    """
    s = np.exp(model.log_s)
    disabled = 0
    for group in (PLUS, MINUS):
        idx = model.group_indices(group)
        doomed = idx[s[idx] < threshold]
        if len(doomed) == len(idx) and len(idx) > 0:
            keep = idx[np.argmax(s[idx])]
            doomed = doomed[doomed != keep]
        if len(doomed):
            model.log_s[doomed] = np.log(disable_value)
            model.active[doomed] = False
            disabled += len(doomed)
    return disabled


# ---------------------------------------------------------------------------
# fit loop


def fit(samples: OrientedSampleSet, config: FitConfig | None = None):
    """Initialize from the samples and run the full optimization loop.

    Deterministic for a fixed config: mini-batches cycle a seeded
    permutation, off-surface batches are drawn fresh each iteration from
    the same generator, and the compiled kernels accumulate in a fixed
    chunk order.  Returns (model, FitReport).
    """
    config = (config or FitConfig()).validate()
    n_samples = len(samples)
    if config.geometric:
        model = geometric_init(samples, rho=config.rho, beta=config.beta)
    else:
        model = random_init(n_samples, samples.points.shape[1],
                            config.rng_seed, beta=config.beta)
    params_initial = parameter_count(model, initial=True)

    if model.weightnorm:
        # a = g * v/|v| is invariant to the stored scale of v, but Adam's
        # per-component steps are not: v kept at |a| ~ rho turns the
        # learning rate into lr/rho for directions and freezes the
        # geometry.  Unit v restores direction mobility at zero cost.
        model.wn_v = model.wn_v / np.linalg.norm(
            model.wn_v, axis=1, keepdims=True)
        model._sync_a()

    m_batch = min(config.batch_size, n_samples)
    rng = np.random.default_rng(config.rng_seed)
    bbox = np.array([[-1.0, 1.0]] * model.dim)
    use_any = (config.use_surface or config.use_normal
               or config.use_occupancy or config.use_prune)

    it_total = config.iterations
    tr_sur = np.zeros(it_total)
    tr_norm = np.zeros(it_total)
    tr_reg = np.zeros(it_total)
    tr_prune = np.zeros(it_total)
    tr_active = np.zeros(it_total, dtype=np.int64)
    prune_events = []
    skipped_steps = 0
    degenerate_normals = 0
    consecutive_skips = 0

    state = AdamState(model)
    perm = rng.permutation(n_samples)
    cursor = 0
    t0 = time.perf_counter()
    for it in range(it_total):
        if m_batch >= n_samples:
            idx = np.arange(n_samples)
        else:
            if cursor + m_batch > n_samples:
                perm = rng.permutation(n_samples)
                cursor = 0
            idx = perm[cursor:cursor + m_batch]
            cursor += m_batch
        X = samples.points[idx]
        U = samples.normals[idx]
        Y = sample_off_surface(bbox, m_batch, rng)

        if use_any:
            losses, grads, skipped = total_loss_and_grads(
                model, X, U, Y,
                use_surface=config.use_surface,
                use_normal=config.use_normal,
                use_occupancy=config.use_occupancy,
                use_prune=config.use_prune)
            degenerate_normals += skipped
            tr_sur[it] = losses["sur"]
            tr_norm[it] = losses["normal"]
            tr_reg[it] = losses["reg"]
            tr_prune[it] = losses["prune"]
            try:
                adam_step(model, grads, state, config.learning_rate,
                          beta1=config.adam_beta1, beta2=config.adam_beta2,
                          eps=config.adam_eps)
                consecutive_skips = 0
            except NonFiniteGradient:
                skipped_steps += 1
                consecutive_skips += 1
                if consecutive_skips >= 100:
                    raise NonFiniteGradient(
                        "aborting fit: 100 consecutive non-finite steps")
        if (it + 1) % config.prune_interval == 0:
            n_off = prune_pass(model, config.prune_threshold,
                               config.prune_disable_value)
            if n_off:
                prune_events.append((it + 1, n_off))
        tr_active[it] = int(model.active.sum())

    wall = time.perf_counter() - t0
    report = FitReport(
        loss_sur=tr_sur, loss_normal=tr_norm, loss_reg=tr_reg,
        loss_prune=tr_prune,
        loss_total=tr_sur + tr_norm + tr_reg + tr_prune,
        active_terms=tr_active, wall_time=wall,
        params_initial=params_initial,
        params_final=parameter_count(model),
        skipped_steps=skipped_steps,
        degenerate_normal_samples=degenerate_normals,
        prune_events=prune_events)
    return model, report
