"""Euler-discretized gradient flow on the CP model.

The loss is the exact full-batch quadratic loss against the identity target.
Three evaluation paths compute it with its gradient:

``gram``
    Sums over index tuples are reduced to ``H x H`` Gram matrices of the
    factors, ``sum f^2 = sum_{k,k'} prod_m <u_k^(m), u_k'^(m)>``.
``tensor``
    The model tensor is formed explicitly through a Khatri-Rao product and the
    gradient is one matrix product per factor. Cheaper than ``gram`` once
    ``H`` exceeds ``p^(nu-1)``.
``direct``
    Plain enumeration of index tuples in batches, kept as the reference.

Every path works on a stack of independent weight states (leading seed axis).
Initial weights come from a Philox stream keyed by ``(base_seed, seed)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from cpgf.config import ModelConfig
from cpgf.errors import DomainError

MODES = ("auto", "gram", "tensor", "direct")


@dataclass(frozen=True)
class Probe:
    """Observable recorded along a trajectory.

    Attributes
    ----------
    kind : str
        ``"entry"`` (model entry ``f_index``), ``"ntk"`` (kernel entry
        between ``index`` and ``other``) or ``"sym2_identity"`` (SYM
        ``nu = 2``: ``Theta_{i,j;j,j'} - f_{i,j'}`` for pairwise distinct
        ``index = (i, j, j')``, which vanishes identically).
    index : tuple of int
    other : tuple of int, optional
    """

    kind: str
    index: tuple
    other: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("entry", "ntk", "sym2_identity"):
            raise ValueError(f"unknown probe kind {self.kind!r}")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        if self.other is not None:
            object.__setattr__(self, "other", tuple(int(i) for i in self.other))
        if self.kind == "ntk" and self.other is None:
            raise ValueError("an ntk probe needs 'other'")

    @property
    def name(self) -> str:
        # no commas, so names are safe as CSV headers
        idx = "-".join(map(str, self.index))
        if self.kind == "entry":
            return f"f[{idx}]"
        if self.kind == "ntk":
            return f"ntk[{idx};{'-'.join(map(str, self.other))}]"
        return f"sym2_identity[{idx}]"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "index": list(self.index)}
        if self.other is not None:
            d["other"] = list(self.other)
        return d


@dataclass(frozen=True)
class SimConfig:
    """Configuration of a Monte-Carlo gradient-flow run.

    Attributes
    ----------
    model : ModelConfig
        Needs concrete ``p`` and ``H``.
    t_max : float
        Final time; negative values run gradient ascent.
    n_steps : int
        Number of Euler steps; the step is ``t_max / n_steps`` and the
        effective learning rate ``|t_max| / (n_steps T)``.
    n_seeds : int
    base_seed : int
    batch_size : int
        Index tuples per batch in ``direct`` mode.
    probes : tuple of Probe
    mode : str
        ``auto``, ``gram``, ``tensor`` or ``direct``.
    zero_target : bool
        Free evolution (no target term).
    stride : int
        Record every ``stride`` steps (the last step is always recorded).
    divergence_factor : float
        A seed is stopped once its loss exceeds this multiple of its initial
        loss or stops being finite.
    seed_batch : int
        Seeds advanced together; results do not depend on it.
    """

    model: ModelConfig
    t_max: float
    n_steps: int
    n_seeds: int = 16
    base_seed: int = 0
    batch_size: int = 4096
    probes: tuple = ()
    mode: str = "auto"
    zero_target: bool = False
    stride: int = 1
    divergence_factor: float = 1e12
    seed_batch: int = 16

    def __post_init__(self):
        if self.model.p is None or self.model.H is None:
            raise ValueError("the simulator needs concrete p and H")
        object.__setattr__(self, "probes", tuple(
            pr if isinstance(pr, Probe) else Probe(**pr) for pr in self.probes))
        for name in ("n_steps", "n_seeds", "batch_size", "stride", "seed_batch"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.t_max == 0:
            raise ValueError("t_max must be non-zero")
        for pr in self.probes:
            _check_probe(pr, self.model)

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    @property
    def eta(self) -> float:
        """Effective learning rate ``|dt| / T``."""
        return abs(self.dt) / self.model.T

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = {k: (v.value if k == "scenario" else v) for k, v in asdict(self.model).items()}
        d["probes"] = [pr.to_dict() for pr in self.probes]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        d["model"] = ModelConfig(**d["model"])
        d["probes"] = tuple(Probe(**pr) for pr in d.get("probes", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _check_probe(pr: Probe, cfg: ModelConfig) -> None:
    nu, p = cfg.nu, cfg.p
    if pr.kind == "sym2_identity":
        if not (cfg.sym and nu == 2):
            raise DomainError("the sym2 identity probe needs SYM nu=2")
        if len(pr.index) != 3 or len(set(pr.index)) != 3:
            raise DomainError("the sym2 identity probe takes pairwise distinct (i, j, j')")
        tuples = [pr.index]
    else:
        tuples = [pr.index] + ([pr.other] if pr.other is not None else [])
        for tup in tuples:
            if len(tup) != nu:
                raise DomainError(f"index tuple {tup} must have length {nu}")
    for tup in tuples:
        if any(not 0 <= i < p for i in tup):
            raise DomainError(f"index tuple {tup} out of range for p={p}")


# Weights


def init_weights(cfg: ModelConfig, seed: int, base_seed: int = 0) -> np.ndarray:
    """Initial weights, i.i.d. ``N(0, sigma^2)``.

    Shape ``(nu, H, p)`` for ASYM and ``(H, p)`` for SYM; the tied factor of
    the SYM model is stored once. The stream is Philox keyed by
    ``(base_seed, seed)``, so each seed is reproducible on its own.
    """
    if cfg.p is None or cfg.H is None:
        raise ValueError("need concrete p and H")
    if seed < 0 or base_seed < 0:
        raise ValueError("seeds must be non-negative")
    rng = np.random.Generator(np.random.Philox(key=(base_seed << 64) | seed))
    shape = (cfg.H, cfg.p) if cfg.sym else (cfg.nu, cfg.H, cfg.p)
    return cfg.sigma * rng.standard_normal(shape)


def _factors(u: np.ndarray, cfg: ModelConfig) -> list:
    """List of ``nu`` factor stacks of shape ``(S, H, p)``."""
    if cfg.sym:
        return [u] * cfg.nu
    return [u[:, m] for m in range(cfg.nu)]


def _fold_grad(grads: list, cfg: ModelConfig) -> np.ndarray:
    if cfg.sym:
        return sum(grads[1:], grads[0])
    return np.stack(grads, axis=1)


def resolve_mode(cfg: ModelConfig, mode: str = "auto") -> str:
    if mode != "auto":
        return mode
    return "gram" if cfg.H <= cfg.p ** (cfg.nu - 1) else "tensor"


# Loss and gradient


def loss_and_grad(u: np.ndarray, cfg: ModelConfig, mode: str = "auto", zero_target: bool = False,
                  batch_size: int = 4096):
    """Exact loss ``1/2 sum (f - F)^2`` and its gradient.

    Parameters
    ----------
    u : ndarray
        One state (shape as from :func:`init_weights`) or a stack of states
        with a leading seed axis.
    cfg : ModelConfig
    mode : str
        ``auto``, ``gram``, ``tensor`` or ``direct``.
    zero_target : bool
        Drop the identity target.
    batch_size : int
        Index tuples per batch in ``direct`` mode.

    Returns
    -------
    loss : float or ndarray
    grad : ndarray
        Same shape as ``u``.
    """
    single = u.ndim == (2 if cfg.sym else 3)
    U = u[None] if single else u
    mode = resolve_mode(cfg, mode)
    if mode == "gram":
        loss, grad = _gram(U, cfg, zero_target)
    elif mode == "tensor":
        loss, grad = _tensor(U, cfg, zero_target)
    elif mode == "direct":
        loss, grad = _direct(U, cfg, zero_target, batch_size)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def _ipow(a: np.ndarray, k: int) -> np.ndarray:
    """Elementwise integer power by repeated multiplication (``**`` is slow here)."""
    out = a
    for _ in range(k - 1):
        out = out * a
    return out


def _target_terms(fs: list, cfg: ModelConfig, zero_target: bool):
    """``sum_k sum_i prod_m u`` and its gradient per factor."""
    S = fs[0].shape[0]
    if zero_target:
        return np.zeros(S), [0.0] * cfg.nu
    nu = cfg.nu
    if cfg.sym:
        g0 = _ipow(fs[0], nu - 1)
        diag = np.sum(g0 * fs[0], axis=(1, 2))
        return diag, [g0] + [0.0] * (nu - 1)
    grads = []
    for m in range(nu):
        others = [fs[j] for j in range(nu) if j != m]
        grads.append(np.prod(others, axis=0))
    diag = np.sum(grads[0] * fs[0], axis=(1, 2))
    return diag, grads


def _exclusive_products(items: list) -> list:
    """``[prod_{j != m} items[j] for m]`` without division."""
    n = len(items)
    prefix = [None] * n
    acc = None
    for m in range(n):
        prefix[m] = acc
        acc = items[m] if acc is None else acc * items[m]
    out = [None] * n
    acc = None
    for m in range(n - 1, -1, -1):
        if prefix[m] is None:
            out[m] = acc
        elif acc is None:
            out[m] = prefix[m]
        else:
            out[m] = prefix[m] * acc
        acc = items[m] if acc is None else items[m] * acc
    return out


def _gram(U, cfg, zero_target):
    nu, p = cfg.nu, cfg.p
    if cfg.sym:
        if nu == 2 and cfg.p < cfg.H:
            # sum (U U^T)^2 = sum (U^T U)^2, with the p x p Gram matrix
            G = np.matmul(U.transpose(0, 2, 1), U)
            sq = np.sum(G * G, axis=(1, 2))
            g_quad = 2 * np.matmul(U, G)
        else:
            G = np.matmul(U, U.transpose(0, 2, 1))
            Gm = _ipow(G, nu - 1)
            sq = np.sum(Gm * G, axis=(1, 2))
            g_quad = nu * np.matmul(Gm, U)
        diag, g_diag = _target_terms([U], cfg, zero_target)
        loss = 0.5 * sq - diag + (0 if zero_target else p / 2)
        grad = g_quad - (0 if zero_target else nu * g_diag[0])
        return loss, grad
    fs = _factors(U, cfg)
    Gs = [np.matmul(F, F.transpose(0, 2, 1)) for F in fs]
    Q = _exclusive_products(Gs)
    sq = np.sum(Q[0] * Gs[0], axis=(1, 2))
    diag, g_diag = _target_terms(fs, cfg, zero_target)
    loss = 0.5 * sq - diag + (0 if zero_target else p / 2)
    grads = [np.matmul(Q[m], fs[m]) - g_diag[m] for m in range(nu)]
    return loss, _fold_grad(grads, cfg)


def _khatri_rao(fs: list) -> np.ndarray:
    """``KR[s, (i_1..i_n), k] = prod_j fs[j][s, k, i_j]`` (first index slowest)."""
    S, H, _ = fs[0].shape
    out = fs[0].transpose(0, 2, 1)
    for F in fs[1:]:
        out = (out[:, :, None, :] * F.transpose(0, 2, 1)[:, None, :, :]).reshape(S, -1, H)
    return out


def _identity_flat(p: int, nu: int) -> np.ndarray:
    step = sum(p**j for j in range(nu))
    return np.arange(p) * step


def _tensor(U, cfg, zero_target):
    nu, p = cfg.nu, cfg.p
    fs = _factors(U, cfg)
    S = U.shape[0]
    diag_pos = _identity_flat(p, nu)
    losses = np.empty(S)
    grads_all = [np.empty_like(fs[m]) for m in range(nu)]
    # one seed at a time keeps the Khatri-Rao block at p^(nu-1) x H
    for s in range(S):
        f1 = [F[s:s + 1] for F in fs]
        rest = _khatri_rao(f1[1:])[0]
        f = f1[0][0].T @ rest.T
        E = f.reshape(-1)
        if not zero_target:
            E = E.copy()
            E[diag_pos] -= 1.0
        losses[s] = 0.5 * float(E @ E)
        Et = E.reshape((p,) * nu)
        if cfg.sym:
            # the residual is a symmetric tensor, so all factors share one contraction
            gm = (Et.reshape(p, -1) @ rest).T
            grads_all[0][s] = nu * gm
            continue
        grads_all[0][s] = (Et.reshape(p, -1) @ rest).T
        for m in range(1, nu):
            others = [f1[j] for j in range(nu) if j != m]
            kr = _khatri_rao(others)[0]
            Em = np.moveaxis(Et, m, 0).reshape(p, -1)
            grads_all[m][s] = (Em @ kr).T
    if cfg.sym:
        return losses, grads_all[0]
    return losses, np.stack(grads_all, axis=1)


def _direct(U, cfg, zero_target, batch_size):
    nu, p = cfg.nu, cfg.p
    fs = _factors(U, cfg)
    S, H, _ = fs[0].shape
    loss = np.zeros(S)
    grads = [np.zeros_like(fs[m]) for m in range(nu)]
    tuples = itertools.product(range(p), repeat=nu)
    while True:
        batch = np.array(list(itertools.islice(tuples, batch_size)), dtype=np.intp)
        if batch.size == 0:
            break
        cols = [fs[m][:, :, batch[:, m]] for m in range(nu)]  # (S, H, B)
        excl = _exclusive_products(cols)
        f = np.sum(excl[0] * cols[0], axis=1)  # (S, B)
        if not zero_target:
            on_diag = np.all(batch == batch[:, :1], axis=1)
            f = f - on_diag
        loss += 0.5 * np.sum(f * f, axis=1)
        for m in range(nu):
            contrib = excl[m] * f[:, None, :]  # (S, H, B)
            onehot = np.zeros((batch.shape[0], p))
            onehot[np.arange(batch.shape[0]), batch[:, m]] = 1.0
            grads[m] += contrib @ onehot
    if cfg.sym:
        return loss, sum(grads[1:], grads[0])
    return loss, np.stack(grads, axis=1)


# Probes


def probe_entry(u: np.ndarray, cfg: ModelConfig, index) -> float:
    """Model entry ``f_index = sum_k prod_m u_{k, i_m}^(m)`` for one state."""
    index = tuple(index)
    _check_probe(Probe("entry", index), cfg)
    fs = _factors(u[None], cfg)
    prod = np.ones(cfg.H)
    for m, i in enumerate(index):
        prod = prod * fs[m][0, :, i]
    return float(np.sum(prod))


def probe_ntk(u: np.ndarray, cfg: ModelConfig, index, other) -> float:
    """Tangent-kernel entry ``Theta_{index; other} = sum_u df_index/du df_other/du``.

    ASYM: ``sum_k sum_m [i_m = i'_m] prod_{m' != m} u_{k,i_m'} u_{k,i'_m'}``.
    SYM: ``sum_k sum_{m,n} [i_m = i'_n] prod_{m' != m} u_{k,i_m'} prod_{n' != n} u_{k,i'_n'}``.
    """
    index, other = tuple(index), tuple(other)
    _check_probe(Probe("ntk", index, other), cfg)
    nu = cfg.nu
    fs = _factors(u[None], cfg)
    a = _exclusive_products([fs[m][0, :, i] for m, i in enumerate(index)])
    b = _exclusive_products([fs[m][0, :, i] for m, i in enumerate(other)])
    total = 0.0
    if cfg.sym:
        for m in range(nu):
            for n in range(nu):
                if index[m] == other[n]:
                    total += float(np.sum(a[m] * b[n]))
        return total
    for m in range(nu):
        if index[m] == other[m]:
            total += float(np.sum(a[m] * b[m]))
    return total


def _probe_value(u, cfg, pr: Probe) -> float:
    if pr.kind == "entry":
        return probe_entry(u, cfg, pr.index)
    if pr.kind == "ntk":
        return probe_ntk(u, cfg, pr.index, pr.other)
    i, j, jp = pr.index
    return probe_ntk(u, cfg, (i, j), (j, jp)) - probe_entry(u, cfg, (i, jp))


# Trajectories


@dataclass
class Trajectory:
    """Recorded observables of one or more seeds.

    Attributes
    ----------
    times : ndarray, shape (n,)
    columns : list of str
        ``"loss"`` followed by the probe names.
    values : ndarray, shape (n_seeds, n, n_columns)
        Per-seed records; entries after a divergence are ``inf`` (loss) or
        ``nan`` (probes).
    diverged_step : list
        Step index at which each seed diverged, or ``None``.
    meta : dict
    """

    times: np.ndarray
    columns: list
    values: np.ndarray
    diverged_step: list
    meta: dict = field(default_factory=dict)

    @property
    def n_seeds(self) -> int:
        return self.values.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return np.mean(self.values, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        if self.n_seeds < 2:
            return np.zeros(self.values.shape[1:])
        with np.errstate(invalid="ignore"):
            return np.std(self.values, axis=0, ddof=1) / math.sqrt(self.n_seeds)

    @property
    def loss_mean(self) -> np.ndarray:
        return self.mean[:, 0]

    @property
    def loss_stderr(self) -> np.ndarray:
        return self.stderr[:, 0]

    @property
    def diverged(self) -> np.ndarray:
        return np.array([d is not None for d in self.diverged_step])

    def to_csv(self) -> str:
        header = ["t", "mean", "stderr"]
        for name in self.columns[1:]:
            header += [f"{name}_mean", f"{name}_stderr"]
        mean, err = self.mean, self.stderr
        lines = [",".join(header)]
        for r, t in enumerate(self.times):
            row = [t]
            for c in range(len(self.columns)):
                row += [mean[r, c], err[r, c]]
            lines.append(",".join(format_float(v) for v in row))
        return "\n".join(lines) + "\n"


def format_float(v) -> str:
    """17-significant-digit representation (round-trip exact)."""
    return format(float(v), ".17g")


def _record_steps(n_steps: int, stride: int) -> list:
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def _simulate(sim: SimConfig, seeds: list) -> Trajectory:
    cfg = sim.model
    mode = resolve_mode(cfg, sim.mode)
    steps = _record_steps(sim.n_steps, sim.stride)
    rec_index = {s: r for r, s in enumerate(steps)}
    n_cols = 1 + len(sim.probes)
    values = np.full((len(seeds), len(steps), n_cols), np.nan)
    diverged = [None] * len(seeds)
    lr = sim.dt / cfg.T
    for start in range(0, len(seeds), sim.seed_batch):
        idx = list(range(start, min(start + sim.seed_batch, len(seeds))))
        u = np.stack([init_weights(cfg, seeds[i], sim.base_seed) for i in idx])
        alive = np.ones(len(idx), dtype=bool)
        ceiling = None
        for step in range(sim.n_steps + 1):
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = loss_and_grad(u[live], cfg, mode, sim.zero_target, sim.batch_size)
            if ceiling is None:
                ceiling = sim.divergence_factor * np.maximum(np.abs(loss), np.finfo(float).tiny)
            bad = ~np.isfinite(loss) | (loss > ceiling[live])
            for j, b in zip(live, bad):
                if b:
                    alive[j] = False
                    diverged[idx[j]] = step
                    values[idx[j], [r for s, r in rec_index.items() if s >= step], 0] = np.inf
            if step in rec_index:
                r = rec_index[step]
                for j, li in enumerate(live):
                    if alive[li]:
                        values[idx[li], r, 0] = loss[j]
                        for c, pr in enumerate(sim.probes, start=1):
                            values[idx[li], r, c] = _probe_value(u[li], cfg, pr)
            if step == sim.n_steps:
                break
            keep = ~bad
            u[live[keep]] = u[live[keep]] - lr * grad[keep]
    times = np.array(steps, dtype=float) * sim.dt
    meta = {"config": sim.digest(), "seeds": list(seeds), "mode": mode, "base_seed": sim.base_seed}
    return Trajectory(times, ["loss"] + [pr.name for pr in sim.probes], values, diverged, meta)


def run(sim: SimConfig, seed: int) -> Trajectory:
    """Single-seed trajectory."""
    return _simulate(sim, [seed])


def monte_carlo(sim: SimConfig) -> Trajectory:
    """Trajectory over seeds ``0..n_seeds-1`` with per-time mean and standard error."""
    return _simulate(sim, list(range(sim.n_seeds)))
