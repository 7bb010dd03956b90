"""Fitting MBE and FS neurons to scalar target functions on an interval.

``fit_mbe`` runs three stages on a uniform sample of the target:

1. structure search: a seeded pool of candidate bases (random decay rates,
   three fixed input maps) is simulated exactly, ``N`` bases are picked by
   orthogonal least squares and their log decay rates are refined by a
   compass search, with the readout weights solved in closed form;
2. surrogate-gradient refinement (Adam, ``lr`` decayed by ``lr_decay`` per
   epoch, full batch) through the exact spiking forward;
3. a final least-squares solve of the readout weights.

The best iterate seen is returned, so stage 2 can only improve the result.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import erf, expit

from .errors import FitFailure, InvalidArgument
from .neuron import (
    FreeScheduleNeuron,
    FSParams,
    MBEBasis,
    MBENeuron,
    binary_fs_params,
    forward,
    simulate_spikes,
)

__all__ = [
    "TargetId",
    "TargetFn",
    "FitConfig",
    "FittedApproximator",
    "FSFit",
    "sample_target",
    "evaluate_mse",
    "fit_mbe",
    "fit_mbe_no_decay",
    "fit_fs",
    "ApproximatorCache",
]

FORMAT_VERSION = 1

# pool decay rates (dt / tau) are drawn log-uniformly from this range
_RATE_RANGE = (0.02, 20.0)
_LOG_CLIP = 30.0
_LADDER = 16


class TargetId(str, enum.Enum):
    GELU = "gelu"
    TANH = "tanh"
    SILU = "silu"
    RELU = "relu"
    EXP2FRAC = "exp2frac"
    INV = "inv"
    INVSQRT = "invsqrt"
    IDENTITY = "identity"


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


_FUNCS = {
    TargetId.GELU: _gelu,
    TargetId.TANH: np.tanh,
    TargetId.SILU: lambda x: x * expit(x),
    TargetId.RELU: lambda x: np.maximum(x, 0.0),
    TargetId.EXP2FRAC: np.exp2,
    TargetId.INV: lambda x: 1.0 / x,
    TargetId.INVSQRT: lambda x: 1.0 / np.sqrt(x),
    TargetId.IDENTITY: lambda x: np.array(x, dtype=np.float64, copy=True),
}


@dataclass(frozen=True)
class TargetFn:
    id: TargetId
    interval: tuple

    def __post_init__(self):
        object.__setattr__(self, "id", TargetId(self.id))
        a, b = (float(v) for v in self.interval)
        if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
            raise InvalidArgument(f"interval must be finite with a < b, got {self.interval}")
        if self.id in (TargetId.INV, TargetId.INVSQRT) and a <= 0:
            raise InvalidArgument(f"{self.id.value} needs a strictly positive interval")
        object.__setattr__(self, "interval", (a, b))

    def __call__(self, x):
        return _FUNCS[self.id](np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class FitConfig:
    M: int = 10000
    epochs: int = 200
    lr: float = 0.01
    lr_decay: float = 0.99
    seed: int = 0
    N: Optional[int] = None
    T: Optional[int] = None
    surrogate_width: float = 1.0
    pool_size: int = 256
    search_budget: int = 2000
    exchange_rounds: int = 3
    search_M: Optional[int] = 2500
    n_starts: int = 1
    patience: Optional[int] = 25

    def __post_init__(self):
        if self.M < 2:
            raise InvalidArgument("M must be at least 2")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be non-negative")
        if not self.lr > 0:
            raise InvalidArgument("lr must be positive")
        if self.n_starts < 1:
            raise InvalidArgument("n_starts must be positive")
        if self.search_M is not None and self.search_M < 2:
            raise InvalidArgument("search_M must be at least 2")
        if self.patience is not None and self.patience < 1:
            raise InvalidArgument("patience must be positive or None")
        if not 0 < self.lr_decay <= 1:
            raise InvalidArgument("lr_decay must lie in (0, 1]")
        if not self.surrogate_width > 0:
            raise InvalidArgument("surrogate_width must be positive")


@dataclass(frozen=True, eq=False)
class FittedApproximator:
    target: TargetFn
    neuron: object
    mse: float
    config: FitConfig
    format_version: int = FORMAT_VERSION

    def __call__(self, x):
        return forward(self.neuron, x)


@dataclass(frozen=True, eq=False)
class FSFit:
    target: TargetFn
    params: FSParams
    mse: float
    init: str
    config: FitConfig


def sample_target(target: TargetFn, M: int, seed) -> tuple:
    """Return ``(x, f(x))`` with ``M`` points on ``[a, b]``.

    The two interval endpoints are always included (``x[0] = a``,
    ``x[1] = b``); the other ``M - 2`` points are uniform draws.
    """
    if int(M) != M or M < 2:
        raise InvalidArgument(f"M must be an integer >= 2, got {M}")
    a, b = target.interval
    rng = np.random.default_rng(seed)
    x = np.empty(int(M))
    x[0], x[1] = a, b
    x[2:] = rng.uniform(a, b, int(M) - 2)
    return x, target(x)


def evaluate_mse(model, dataset) -> float:
    """Mean squared error of ``model`` (any neuron or FSParams) on ``(x, y)``."""
    x, y = (np.asarray(v, dtype=np.float64) for v in dataset)
    if x.size == 0:
        raise InvalidArgument("dataset is empty")
    err = forward(model, x) - y
    return float(np.mean(err * err))


# --------------------------------------------------------------------------
# structure search


def _input_maps(a, b, alpha):
    """(offset, gain) pairs: identity, [a,b] -> [0,alpha], [a,b] -> [alpha,0]."""
    span = b - a
    return [(0.0, 1.0), (a, alpha / span), (b, -alpha / span)]


def _basis_outputs(u0, alpha, log_rates, T):
    """Per-basis decoded output (unit weight) for a stack of candidate bases.

    ``u0``: (M,) membrane start shared by the candidates; ``log_rates``:
    (K, 3) log(dt/tau) for d, r, vth.  Returns (K, M).
    """
    t = np.arange(T)
    sched = alpha * np.exp(-t[None, None, :] * np.exp(log_rates)[:, :, None])
    u = np.repeat(u0[None, :], len(log_rates), axis=0)
    out = np.zeros_like(u)
    for k in range(T):
        s = u >= sched[:, 2, k, None]
        u -= s * sched[:, 1, k, None]
        out += s * sched[:, 0, k, None]
    return out


def _ols_select(pool, y, n):
    """Greedy orthogonal least squares: indices of ``n`` rows of ``pool``."""
    chosen = []
    q = np.zeros((0, pool.shape[1]))
    resid = y.copy()
    tol = 1e-12 * float(y @ y + 1.0)
    for _ in range(n):
        R = pool - (pool @ q.T) @ q
        norms = np.einsum("ij,ij->i", R, R)
        gain = np.full(len(pool), -1.0)
        ok = norms > tol
        gain[ok] = (R[ok] @ resid) ** 2 / norms[ok]
        gain[chosen] = -1.0
        p = int(np.argmax(gain))
        if gain[p] < 0:
            break
        chosen.append(p)
        qv = R[p] / math.sqrt(norms[p])
        q = np.vstack([q, qv])
        resid = resid - (qv @ resid) * qv
    return chosen


def _solve_readout(G, c, yy, M):
    """Least-squares readout from the Gram matrix; returns ``(w, mse)``."""
    w = np.linalg.lstsq(G, c, rcond=None)[0]
    return w, max((yy - 2.0 * (w @ c) + w @ G @ w) / M, 0.0)


def _ls_readout(B, y):
    """Readout weights for per-basis outputs ``B`` (N, M)."""
    return _solve_readout(B @ B.T, B @ y, float(y @ y), y.size)


def _compass_search(U, y, alpha, T, log_rates, B, budget):
    """Coordinate search over log decay rates with closed-form readout."""
    n = len(log_rates)
    M = y.size
    yy = float(y @ y)
    G = B @ B.T
    c = B @ y
    w, best = _solve_readout(G, c, yy, M)
    step, evals = 0.5, 0
    while step > 1e-3 and evals < budget:
        moved = False
        for i in range(n):
            for j in range(3):
                for sign in (1.0, -1.0):
                    trial = log_rates[i].copy()
                    trial[j] = np.clip(trial[j] + sign * step, -_LOG_CLIP, _LOG_CLIP)
                    row = _basis_outputs(U[i], alpha, trial[None], T)[0]
                    g = B @ row
                    g[i] = row @ row
                    G2 = G.copy()
                    G2[i, :] = g
                    G2[:, i] = g
                    c2 = c.copy()
                    c2[i] = row @ y
                    w2, m2 = _solve_readout(G2, c2, yy, M)
                    evals += 1
                    if m2 < best * (1 - 1e-12):
                        log_rates[i], B[i], G, c, w, best = trial, row, G2, c2, w2, m2
                        moved = True
                        break
        if not moved:
            step /= 2
    return log_rates, B, w


def _structure_search(x, y, alpha, a, b, N, T, cfg, rng):
    maps = _input_maps(a, b, alpha)
    U_maps = [g * (x - off) for off, g in maps]
    lo, hi = np.log(_RATE_RANGE[0]), np.log(_RATE_RANGE[1])
    pools, rates, tags = [], [], []
    for m, u in enumerate(U_maps):
        # equal-rate ladder (d = r = vth up to scale: near-identity coders) + random draws
        ladder = np.repeat(np.linspace(np.log(0.3), np.log(1.5), _LADDER)[:, None], 3, axis=1)
        lr = np.concatenate([ladder, rng.uniform(lo, hi, (cfg.pool_size, 3))])
        pools.append(_basis_outputs(u, alpha, lr, T))
        rates.append(lr)
        tags.append(np.full(len(lr), m))
    pool, rates, tags = np.concatenate(pools), np.concatenate(rates), np.concatenate(tags)
    # families: all maps mixed, then each map alone; each family's OLS pick
    # seeds an independent local search and the best result wins
    families = [np.arange(len(pool))] + [np.flatnonzero(tags == m) for m in range(len(maps))]
    starts = []
    for idx in families:
        sel = _ols_select(pool[idx], y, N)
        if len(sel) == N and not any(np.array_equal(idx[sel], s[1]) for s in starts):
            Bm = pool[idx[sel]]
            starts.append((_ls_readout(Bm, y)[1], idx[sel]))
    # most promising start first
    starts = [s[1] for s in sorted(starts, key=lambda s: s[0])]
    if not starts:
        raise FitFailure("no candidate basis produces spikes on the interval", {"N": N, "T": T})
    out = []
    for picked in starts[: cfg.n_starts]:
        _, log_rates, picked, w = _local_search(picked.copy(), pool, rates, tags, U_maps, y, alpha, T, cfg)
        out.append((log_rates, [maps[m] for m in tags[picked]], w))
    return out


def _local_search(picked, pool, rates, tags, U_maps, y, alpha, T, cfg):
    log_rates = rates[picked].copy()
    B = pool[picked].copy()
    U = [U_maps[m] for m in tags[picked]]
    log_rates, B, w = _compass_search(U, y, alpha, T, log_rates, B, cfg.search_budget)
    for _ in range(cfg.exchange_rounds):
        swap = _best_exchange(pool, B, y)
        if swap is None:
            break
        i, p = swap
        picked[i] = p
        log_rates[i] = rates[p]
        B[i] = pool[p]
        U[i] = U_maps[tags[p]]
        log_rates, B, w = _compass_search(U, y, alpha, T, log_rates, B, cfg.search_budget)
    mse = float(np.mean((w @ B - y) ** 2))
    return mse, log_rates, picked, w


def _best_exchange(pool, B, y):
    """Best single swap of a selected basis for a pool candidate, if it helps."""
    N, M = B.shape
    yy = float(y @ y)
    G = B @ B.T
    c = B @ y
    _, current = _solve_readout(G, c, yy, M)
    cross = pool @ B.T  # (P, N)
    pc = pool @ y
    pn = np.einsum("ij,ij->i", pool, pool)
    best = (current * (1 - 1e-9), None)
    for i in range(N):
        keep = [j for j in range(N) if j != i]
        Gk = G[np.ix_(keep, keep)]
        ck = c[keep]
        for p in np.flatnonzero(pn > 0):
            G2 = np.empty((N, N))
            G2[:-1, :-1] = Gk
            G2[-1, :-1] = G2[:-1, -1] = cross[p, keep]
            G2[-1, -1] = pn[p]
            c2 = np.append(ck, pc[p])
            _, m = _solve_readout(G2, c2, yy, M)
            if m < best[0]:
                best = (m, (i, int(p)))
    return best[1]


# --------------------------------------------------------------------------
# surrogate-gradient refinement


class _DecayParams:
    """log tau (N, 3) and log dt (N,): schedules alpha * exp(-t dt / tau)."""

    def __init__(self, alpha, log_tau, log_dt, T):
        self.alpha, self.T = alpha, T
        self.values = [np.array(log_tau, dtype=np.float64), np.array(log_dt, dtype=np.float64)]
        self._t = np.arange(T, dtype=np.float64)

    def schedules(self):
        log_tau, log_dt = self.values
        rate = np.exp(log_dt[:, None] - log_tau)  # (N, 3)
        self._s = self.alpha * np.exp(-self._t[None, None, :] * rate[:, :, None])  # (N, 3, T)
        self._rate = rate
        return self._s[:, 0], self._s[:, 1], self._s[:, 2]

    def grads(self, gd, gr, gv):
        g = np.stack([gd, gr, gv], axis=1)  # (N, 3, T)
        # d sched / d log_tau = sched * t * rate ; d / d log_dt is the negative
        dlt = np.sum(g * self._s * self._t[None, None, :], axis=2) * self._rate
        return [dlt, -dlt.sum(axis=1)]

    def clip(self):
        for v in self.values:
            np.clip(v, -_LOG_CLIP, _LOG_CLIP, out=v)


class _FreeParams:
    def __init__(self, d, r, vth):
        self.values = [np.array(a, dtype=np.float64) for a in (d, r, vth)]

    def schedules(self):
        return tuple(self.values)

    def grads(self, gd, gr, gv):
        return [gd, gr, gv]

    def clip(self):
        pass


def _surrogate_step(u0, y, params, w, width):
    """Exact forward, surrogate backward.  Returns (mse, grads, grad_w, spikes)."""
    d, r, vth = params.schedules()
    M, N = u0.shape
    T = d.shape[1]
    S = np.empty((T, M, N))
    W = np.empty((T, M, N), dtype=bool)
    u = u0.copy()
    half = width / 2
    for t in range(T):
        diff = u - vth[:, t]
        s = diff >= 0
        S[t] = s
        W[t] = np.abs(diff) < half
        u = u - s * r[:, t]
    o = np.einsum("tmn,nt->mn", S, d)
    err = o @ w - y
    mse = float(np.mean(err * err))
    g_out = (2.0 / M) * err
    g_o = g_out[:, None] * w[None, :]
    gw = o.T @ g_out
    gd = np.einsum("mn,tmn->nt", g_o, S)
    gr = np.zeros_like(r)
    gv = np.zeros_like(vth)
    gu = np.zeros((M, N))
    for t in range(T - 1, -1, -1):
        gs = g_o * d[:, t] - gu * r[:, t]
        gr[:, t] = -np.sum(gu * S[t], axis=0)
        gpre = gs * W[t] / width
        gv[:, t] = -np.sum(gpre, axis=0)
        gu = gu + gpre
    return mse, params.grads(gd, gr, gv), gw


class _Adam:
    def __init__(self, arrays, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.k = 0

    def step(self, arrays, grads, lr):
        self.k += 1
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.k)
            vh = v / (1 - self.b2**self.k)
            a -= lr * mh / (np.sqrt(vh) + self.eps)


def _refine(u0, y, params, w, learn_w, cfg):
    """Adam with exponential lr decay; returns the best (params, w) snapshot.

    Stops early after ``cfg.patience`` epochs without a new best loss.
    """
    w = np.array(w, dtype=np.float64)
    arrays = params.values + ([w] if learn_w else [])
    opt = _Adam(arrays, cfg.lr)
    best = (np.inf, [v.copy() for v in params.values], w.copy())
    history = []
    since_best = 0
    for epoch in range(cfg.epochs + 1):
        mse, grads, gw = _surrogate_step(u0, y, params, w, cfg.surrogate_width)
        if not np.isfinite(mse):
            raise FitFailure("loss became non-finite", {"epoch": epoch, "history": history[-5:]})
        history.append(mse)
        if mse < best[0]:
            best = (mse, [v.copy() for v in params.values], w.copy())
            since_best = 0
        else:
            since_best += 1
        if epoch == cfg.epochs or (cfg.patience is not None and since_best >= cfg.patience):
            break
        opt.step(arrays, grads + ([gw] if learn_w else []), cfg.lr * cfg.lr_decay**epoch)
        params.clip()
    params.values[:] = best[1]
    return best[2], history


# --------------------------------------------------------------------------
# public fitters


def _prepare(target, N, T, config):
    if target.id is TargetId.IDENTITY:
        raise InvalidArgument("identity mappings use fixed binary parameters; use make_identity_encoder")
    cfg = replace(config or FitConfig(), N=N, T=T)
    if N is not None and (int(N) != N or N < 1):
        raise InvalidArgument(f"N must be a positive integer, got {N}")
    if int(T) != T or T < 1:
        raise InvalidArgument(f"T must be a positive integer, got {T}")
    x, y = sample_target(target, cfg.M, cfg.seed)
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("target is not finite on the interval")
    if np.ptp(y) == 0:
        raise InvalidArgument("constant targets cannot be represented (the readout has no bias term)")
    return cfg, x, y


def fit_mbe(target: TargetFn, N: int, T: int, config: Optional[FitConfig] = None) -> FittedApproximator:
    """Fit an ``N``-basis, ``T``-step MBE neuron to ``target``."""
    cfg, x, y = _prepare(target, N, T, config)
    a, b = target.interval
    alpha = float(np.max(np.abs(y)))
    rng = np.random.default_rng([cfg.seed, 1])
    # the search runs on the first search_M samples (endpoints included);
    # its candidates are ranked on the full sample
    m = cfg.M if cfg.search_M is None else min(cfg.M, cfg.search_M)
    best = None
    for log_rates, maps, w in _structure_search(x[:m], y[:m], alpha, a, b, N, T, cfg, rng):
        offsets = np.array([mp[0] for mp in maps])
        gains = np.array([mp[1] for mp in maps])
        u0 = (x[:, None] - offsets) * gains
        B = np.stack([_basis_outputs(u0[:, n], alpha, log_rates[n][None], T)[0] for n in range(N)])
        w, mse = _ls_readout(B, y)
        if best is None or mse < best[0]:
            best = (mse, log_rates, offsets, gains, u0, w)
    _, log_rates, offsets, gains, u0, w = best
    params = _DecayParams(alpha, -log_rates, np.zeros(N), T)
    w, _ = _refine(u0, y, params, w, True, cfg)

    log_tau, log_dt = params.values
    d, r, vth = params.schedules()
    spikes, _ = simulate_spikes(u0, d, r, vth)
    per_basis = np.sum(d * spikes, axis=-1)
    w_ls = _ls_readout(per_basis.T, y)[0]
    if np.mean((per_basis @ w_ls - y) ** 2) < np.mean((per_basis @ w - y) ** 2):
        w = w_ls

    dt = np.exp(log_dt)
    taus = np.exp(log_tau)
    bases = tuple(
        MBEBasis(float(taus[n, 0]), float(taus[n, 1]), float(taus[n, 2]), float(dt[n]), float(offsets[n]), float(gains[n]))
        for n in range(N)
    )
    neuron = MBENeuron(alpha, bases, w, T)
    mse = evaluate_mse(neuron, (x, y))
    if not np.isfinite(mse):
        raise FitFailure("fitted neuron produces non-finite output", {"seed": cfg.seed})
    return FittedApproximator(target, neuron, mse, cfg)


def fit_mbe_no_decay(target: TargetFn, N: int, T: int, config: Optional[FitConfig] = None) -> FittedApproximator:
    """Ablation: ``3 * N * T`` free schedule values, no decay constraint.

    Schedules start constant at ``alpha`` (no decay) with ``w = 1/N``; every
    basis sees the interval mapped onto ``[0, alpha]``.
    """
    cfg, x, y = _prepare(target, N, T, config)
    a, b = target.interval
    alpha = float(np.max(np.abs(y)))
    off, gain = _input_maps(a, b, alpha)[1]
    const = np.full((N, T), alpha)
    params = _FreeParams(const, const, const)
    u0 = np.repeat(((x - off) * gain)[:, None], N, axis=1)
    w, _ = _refine(u0, y, params, np.full(N, 1.0 / N), True, cfg)
    d, r, vth = params.values
    neuron = FreeScheduleNeuron(d, r, vth, w, np.full(N, off), np.full(N, gain))
    return FittedApproximator(target, neuron, evaluate_mse(neuron, (x, y)), cfg)


def fit_fs(target: TargetFn, T: int, init: str = "binary", config: Optional[FitConfig] = None, init_seed=None) -> FSFit:
    """Fit the per-timestep ``d, r, vth`` of a single FS neuron.

    ``init`` is ``"binary"`` (halving schedule over ``[0, scale)``, with
    ``scale = b`` for intervals reaching above zero) or ``"random"`` (uniform
    on ``[0, scale)``, seeded by ``init_seed``, defaulting to the config seed).
    """
    cfg, x, y = _prepare(target, None, T, config)
    a, b = target.interval
    scale = b if b > 0 else b - a
    if init == "binary":
        p0 = binary_fs_params(T, scale)
        d0, r0, v0 = p0.d, p0.r, p0.vth
    elif init == "random":
        rng = np.random.default_rng(cfg.seed if init_seed is None else init_seed)
        d0, r0, v0 = rng.uniform(0.0, scale, (3, T))
    else:
        raise InvalidArgument(f"init must be 'binary' or 'random', got {init!r}")
    params = _FreeParams(d0[None], r0[None], v0[None])
    _refine(x[:, None], y, params, np.ones(1), False, cfg)
    d, r, vth = (v[0] for v in params.values)
    fs = FSParams(d, r, vth)
    return FSFit(target, fs, evaluate_mse(fs, (x, y)), init, cfg)


def config_dict(cfg: FitConfig) -> dict:
    return asdict(cfg)


def _cache_key(target, N, T, cfg, no_decay):
    return (target.id.value, target.interval, int(N), int(T), tuple(sorted(asdict(cfg).items())), bool(no_decay))


class ApproximatorCache:
    """In-memory memo of fits keyed by target, interval, N, T and config."""

    def __init__(self):
        self._fits = {}

    def get(self, target: TargetFn, N: int, T: int, config: Optional[FitConfig] = None,
            no_decay: bool = False) -> FittedApproximator:
        cfg = config or FitConfig()
        key = _cache_key(target, N, T, cfg, no_decay)
        if key not in self._fits:
            self._fits[key] = self._load_or_fit(target, N, T, cfg, no_decay)
        return self._fits[key]

    def _load_or_fit(self, target, N, T, cfg, no_decay):
        fit = fit_mbe_no_decay if no_decay else fit_mbe
        return fit(target, N, T, cfg)

    def __len__(self):
        return len(self._fits)
