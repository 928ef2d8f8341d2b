"""Stationary-law sampling for R_n = Psi_n(R_{n-1}).

Three methods: independent replica chains (default), truncated perpetuity
sums (affine maps only) and a Rao-Blackwellized (smoothed) tail estimator on
top of either.  Sampling is chunked; each chunk owns a counter-based Philox
stream keyed by (seed, chunk_index), so results are bit-identical for any
worker count.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dist import Constant, TailModel
from .maps import (
    AFFINE,
    EQUAL,
    INDEPENDENT,
    MAX_AFFINE,
    POS_PART_AFFINE,
    SIGNED,
    CoeffLaw,
    MapFamily,
    apply_map,
    draw_coeffs,
)

__all__ = [
    "SimConfig",
    "SampleBatch",
    "EngineError",
    "sample_stationary_chain",
    "sample_perpetuity",
    "smoothed_tail",
    "conditional_tail",
    "save_batch",
    "load_batch",
]

_MAGIC = b"SFPB"
_VERSION = 1

CHAIN = "chain"
PERPETUITY = "perpetuity"
SMOOTHED = "smoothed"


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_samples: int
    seed: int
    burn_in: int = 64
    chunk_size: int = 1 << 16
    method: str = CHAIN
    truncation_eps: float = 1e-3
    x_init: float = 0.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        if not (0.0 < self.truncation_eps < 1.0):
            raise ValueError("truncation_eps must be in (0, 1)")
        if self.method not in (CHAIN, PERPETUITY, SMOOTHED):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SampleBatch:
    values: np.ndarray
    method: str
    seed: int
    config: SimConfig
    extra: dict = field(default_factory=dict)


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), chunk_index]))


def _chunk_ranges(n, chunk_size):
    return [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def _chain_chunk(args):
    family, cfg, chunk_index, lo, hi = args
    n = hi - lo
    rng = _chunk_rng(cfg.seed, chunk_index)
    x = np.full(n, cfg.x_init, dtype=float)
    for step in range(cfg.burn_in):
        a, b = draw_coeffs(family.coeff, n, rng)
        if family.kind == "sqrt_log":
            c = family.marginal_c.sample(n, rng)
        else:
            c = 0.0
        x = apply_map(family.kind, a, b, c, x)
        if not np.all(np.isfinite(x)):
            i = int(np.argmax(~np.isfinite(x)))
            raise EngineError(
                f"non-finite state in replica {lo + i} at step {step}"
            )
    return chunk_index, x


def _perpetuity_chunk(args):
    coeff, cfg, n_terms, chunk_index, lo, hi = args
    n = hi - lo
    rng = _chunk_rng(cfg.seed, chunk_index)
    acc = np.zeros(n)
    prod = np.ones(n)
    for k in range(n_terms):
        a, b = draw_coeffs(coeff, n, rng)
        acc += b * prod
        prod *= a
        if not np.all(np.isfinite(acc)):
            i = int(np.argmax(~np.isfinite(acc)))
            raise EngineError(f"non-finite partial sum in replica {lo + i} at term {k}")
    return chunk_index, acc


def _run_chunks(worker, jobs, n_total, workers=1):
    out = np.empty(n_total)
    if workers <= 1:
        results = map(worker, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        try:
            results = list(pool.map(worker, jobs, chunksize=1))
        finally:
            pool.shutdown()
    ranges = {j[-3]: (j[-2], j[-1]) for j in jobs}
    for chunk_index, values in results:
        lo, hi = ranges[chunk_index]
        out[lo:hi] = values
    return out


def sample_stationary_chain(family: MapFamily, cfg: SimConfig, workers: int = 1) -> SampleBatch:
    """n_samples independent replicas, each the chain state after burn_in
    iterations from x_init."""
    jobs = [
        (family, cfg, idx, lo, hi)
        for idx, (lo, hi) in enumerate(_chunk_ranges(cfg.n_samples, cfg.chunk_size))
    ]
    values = _run_chunks(_chain_chunk, jobs, cfg.n_samples, workers)
    return SampleBatch(values, CHAIN, cfg.seed, cfg)


def perpetuity_terms(coeff: CoeffLaw, eps: float) -> int:
    """Number of terms K with remainder bound (E|A|^s)^K E|B|^s / (1-E|A|^s) < eps,
    s = min(1, alpha-moment order that is finite); here s = 1 or the tail index."""
    s = 1.0
    ma = coeff.marginal_a.alpha_moment(s)
    mb = coeff.marginal_b.alpha_moment(s)
    if not (math.isfinite(ma) and ma < 1.0):
        raise EngineError(
            "perpetuity truncation bound unavailable; use chain method"
        )
    k = 1
    bound = ma * mb / (1.0 - ma)
    while bound >= eps:
        bound *= ma
        k += 1
        if k > 100000:
            raise EngineError("perpetuity truncation bound does not contract")
    return k


def sample_perpetuity(coeff: CoeffLaw, cfg: SimConfig, workers: int = 1) -> SampleBatch:
    """Truncated perpetuity sums sum_{k<K} B_{k+1} prod_{j<=k} A_j for the
    affine map; K is chosen from the Markov-inequality remainder bound."""
    n_terms = perpetuity_terms(coeff, cfg.truncation_eps)
    jobs = [
        (coeff, cfg, n_terms, idx, lo, hi)
        for idx, (lo, hi) in enumerate(_chunk_ranges(cfg.n_samples, cfg.chunk_size))
    ]
    values = _run_chunks(_perpetuity_chunk, jobs, cfg.n_samples, workers)
    s = 1.0
    ma = coeff.marginal_a.alpha_moment(s)
    mb = coeff.marginal_b.alpha_moment(s)
    bound = ma**n_terms * mb / (1.0 - ma)
    return SampleBatch(
        values, PERPETUITY, cfg.seed, cfg, extra={"n_terms": n_terms, "remainder_bound": bound}
    )


# --- smoothed (Rao-Blackwellized) tail estimation --------------------------

class SmoothingUnavailable(ValueError):
    """No closed-form conditional tail for this (kind, dependence); fall back
    to the empirical survival function."""


_GL_NODES = 96


def _gl01(n=_GL_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _scaled_tail(marginal: TailModel, s, u):
    """P[W s > u] for W ~ marginal (W > 0), vectorized over s, u."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty(np.broadcast(s, u).shape)
    s, u = np.broadcast_arrays(s, u)
    pos = s > 0
    neg = s < 0
    zero = ~pos & ~neg
    out[pos] = marginal.survival(u[pos] / s[pos])
    # s < 0: P[W s > u] = P[W < u/s]; continuous marginals, strictness immaterial
    out[neg] = 1.0 - marginal.survival(u[neg] / s[neg])
    out[zero] = (u[zero] < 0.0).astype(float)
    return out


def _affine_branch(wm: TailModel, bm: TailModel, s, t: float, sigma: int):
    """P[s W + sigma B > t] for independent W ~ wm > 0, B ~ bm > 0, t > 0.

    Integrates over the B marginal on its survival scale v = S_B(b) with
    Gauss-Legendre nodes, after splitting off the regions where the
    W-conditional probability is exactly 0 or 1 (missing the exact-one region
    near v = 0 silently drops the "B alone exceeds t" mass, which dominates
    deep in the tail).
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if isinstance(bm, Constant):
        return _scaled_tail(wm, s, t - sigma * bm.c)
    x0w = wm.support_low
    g, gw = _gl01()
    out = np.zeros(s.shape)

    def _gl_between(lo, hi, h):
        # integral of h over v in (lo, hi), per element; lo/hi arrays
        span = hi - lo
        v = lo[:, None] + span[:, None] * g[None, :]
        b = bm.quantile(np.clip(v, 1e-300, 1.0))
        return span * (h(b) @ gw)

    pos = s > 0
    neg = s < 0
    if sigma > 0:
        zero = ~pos & ~neg
        out[zero] = float(bm.survival(t))
        if np.any(pos):
            sp = s[pos]
            # exact 1 for b > t - s*x0w, i.e. v < u_star
            u_star = np.asarray(bm.survival(t - sp * x0w), dtype=float)
            vals = _gl_between(
                u_star,
                np.ones_like(u_star),
                lambda b: wm.survival((t - b) / sp[:, None]),
            )
            out[pos] = u_star + vals
        if np.any(neg):
            sn = -s[neg]
            # nonzero only for b > t + |s|*x0w, i.e. v < u_star
            u_star = np.asarray(bm.survival(t + sn * x0w), dtype=float)
            vals = _gl_between(
                np.zeros_like(u_star),
                u_star,
                lambda b: 1.0 - wm.survival((b - t) / sn[:, None]),
            )
            out[neg] = vals
    else:
        # P[s W - B > t]: needs s > 0 and then b < s*x0w - t can make it certain
        if np.any(pos):
            sp = s[pos]
            v_bar = np.asarray(bm.survival(sp * x0w - t), dtype=float)
            vals = _gl_between(
                np.zeros_like(v_bar),
                v_bar,
                lambda b: wm.survival((t + b) / sp[:, None]),
            )
            out[pos] = (1.0 - v_bar) + vals
        # s <= 0: sW - B <= 0 < t almost surely
    return out


def _indep_affine_tail(coeff: CoeffLaw, t: float, y, sign_a=1.0, side=+1):
    """P[side-tail of sign_a*W*y + B at level t] for independent B,
    W ~ marginal_a > 0; side = +1 is P[. > t], side = -1 is P[. < -t]."""
    y = np.asarray(y, dtype=float)
    return _affine_branch(
        coeff.marginal_a, coeff.marginal_b, side * sign_a * y, t, side
    )


def conditional_tail(coeff: CoeffLaw, kind: str, t: float, y, side=+1):
    """Exact P[Psi(y) > t] (side=+1) or P[Psi(y) < -t] (side=-1) given the
    previous state y, for the closed-form combinations."""
    y = np.asarray(y, dtype=float)
    dep = coeff.dependence
    if kind == AFFINE and dep == EQUAL:
        s = y + 1.0
        return _scaled_tail(coeff.marginal_a, side * s, t)
    if kind == AFFINE and dep == INDEPENDENT:
        return _indep_affine_tail(coeff, t, y, side=side)
    if kind == AFFINE and dep == SIGNED:
        p = coeff.p_plus
        plus = _indep_affine_tail(coeff, t, y, sign_a=+1.0, side=side)
        minus = _indep_affine_tail(coeff, t, y, sign_a=-1.0, side=side)
        return p * plus + (1.0 - p) * minus
    if kind == POS_PART_AFFINE and dep == INDEPENDENT:
        return _indep_affine_tail(coeff, t, np.maximum(y, 0.0), side=side)
    if kind == MAX_AFFINE and dep == INDEPENDENT:
        if side < 0:
            # A, B >= 0: max(Ay, B) has no left tail below -t < 0
            return np.zeros_like(y)
        sa = _scaled_tail(coeff.marginal_a, y, t)
        sb = float(coeff.marginal_b.survival(t))
        return sa + sb - sa * sb
    raise SmoothingUnavailable(
        f"no closed-form conditional tail for ({kind}, {dep})"
    )


_SMOOTH_GRID = 8192
_SMOOTH_DIRECT_LIMIT = 200_000


def smoothed_tail(batch: SampleBatch, coeff: CoeffLaw, kind: str, t: float, side=+1):
    """Mean over stationary samples y_i of P[Psi(y_i) > t]; unbiased for
    P[R > t] with strictly smaller variance than the indicator estimator.

    Returns (estimate, standard error).  For large batches the conditional
    tail (a smooth monotone function of y) is evaluated on a dense grid and
    interpolated; the grid error is far below Monte Carlo noise.
    """
    y = np.asarray(batch.values, dtype=float)
    exact = (kind == AFFINE and coeff.dependence == EQUAL) or isinstance(
        coeff.marginal_b, Constant
    )
    if exact or y.size <= _SMOOTH_DIRECT_LIMIT:
        vals = conditional_tail(coeff, kind, t, y, side=side)
    else:
        # asinh scale covers signed, heavy-tailed sample ranges gracefully
        g = np.asinh(y)
        glo, ghi = float(g.min()), float(g.max())
        grid_g = np.linspace(glo, ghi, _SMOOTH_GRID)
        grid_y = np.sinh(grid_g)
        grid_v = conditional_tail(coeff, kind, t, grid_y, side=side)
        vals = np.interp(g, grid_g, grid_v)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    return est, se


# --- batch persistence ------------------------------------------------------

def save_batch(batch: SampleBatch, path):
    """16-byte header (magic, version, count) + little-endian float64 values,
    with a sidecar text file echoing the config."""
    values = np.ascontiguousarray(batch.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, values.size))
        fh.write(values.tobytes())
    cfg = batch.config
    lines = [
        f"method = {batch.method}",
        f"n_samples = {cfg.n_samples}",
        f"seed = {cfg.seed}",
        f"burn_in = {cfg.burn_in}",
        f"chunk_size = {cfg.chunk_size}",
        f"truncation_eps = {cfg.truncation_eps!r}",
        f"x_init = {cfg.x_init!r}",
    ]
    for k, v in sorted(batch.extra.items()):
        lines.append(f"{k} = {v!r}")
    with open(str(path) + ".cfg", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_batch(path) -> SampleBatch:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise EngineError(f"bad magic in batch file {path}")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise EngineError(f"unsupported batch version {version}")
        values = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
    meta = {}
    try:
        with open(str(path) + ".cfg") as fh:
            for line in fh:
                if "=" in line:
                    k, v = (s.strip() for s in line.split("=", 1))
                    meta[k] = v
    except FileNotFoundError:
        pass
    cfg = SimConfig(
        n_samples=int(meta.get("n_samples", count)),
        seed=int(meta.get("seed", 0)),
        burn_in=int(meta.get("burn_in", 64)),
        chunk_size=int(meta.get("chunk_size", 1 << 16)),
        method=meta.get("method", CHAIN),
        truncation_eps=float(meta.get("truncation_eps", 1e-3)),
        x_init=float(meta.get("x_init", 0.0)),
    )
    return SampleBatch(values.copy(), cfg.method, cfg.seed, cfg)
