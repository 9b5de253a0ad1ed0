"""A small equivariant transformer potential with an explicit reverse pass.

Every atom carries scalar features ``h`` (N x C) and vector features ``v``
(N x C x 3).  One layer, for directed edge ``e = (i, j)`` with unit
direction ``u_e`` (pointing from i to j), RBF features ``phi_e`` and
envelope ``fc_e``::

    q, k, m, s = h Wq^T, h Wk^T, h Wm^T, h Ws^T
    rho_e      = phi_e Wr^T
    score_e,n  = sum_{c in head n} q_ic k_jc rho_ec / sqrt(C / H)
    a_e,n      = silu(score_e,n) * fc_e                 (broadcast to head channels as alpha_e)
    h_i       += sum_e alpha_e * m_j
    v_i       += sum_e alpha_e * Wv (v_j + u_e (x) s_j)

``Wv`` mixes channels only, so it commutes with rotations.  After the
last layer each atom's energy is a one-hidden-layer silu network of
``[h_i, |v_i|]`` with ``|v_i|`` taken per channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .aev import cutoff_fn, cutoff_fn_grad
from .counters import FLOAT_BYTES, INDEX_BYTES, OpCounters, stage_of
from .errors import SingularityError, StaleTapeError, UnsupportedSpeciesError
from .neighbors import PairList, build_pairs, ordered_scatter_add
from .potential import PotentialResult, on_subset, timed, total_energy
from .system import SYMBOLS, AtomicSystem

NORM_EPS = 1e-12
MIN_DISTANCE = 1e-6


def silu(x):
    return x * expit(x)


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(eq=False)
class EtLayer:
    wq: np.ndarray  # (C, C)
    wk: np.ndarray
    wm: np.ndarray  # the W_h projection of the scalar message
    ws: np.ndarray  # scalar that multiplies the edge direction
    wv: np.ndarray  # channel mixing of vector features
    wr: np.ndarray  # (C, K) RBF projection


@dataclass(eq=False)
class EtParams:
    channels: int = 64
    heads: int = 4
    rbf_count: int = 32
    cutoff: float = 5.0
    embedding: np.ndarray | None = None  # (n_species, C)
    layers: list = field(default_factory=list)
    readout_w1: np.ndarray | None = None  # (F, 2C)
    readout_b1: np.ndarray | None = None
    readout_w2: np.ndarray | None = None  # (F,)
    readout_b2: float = 0.0
    rbf_beta: float | None = None
    species: tuple = SYMBOLS

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError("channels must be divisible by heads")
        if self.cutoff <= 0 or self.rbf_count < 1:
            raise ValueError("need a positive cutoff and at least one RBF")
        if self.rbf_beta is None:
            self.rbf_beta = (self.rbf_count / self.cutoff) ** 2
        self.species = tuple(self.species)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def rbf_centers(self) -> np.ndarray:
        return np.linspace(0.0, self.cutoff, self.rbf_count)

    def arrays(self):
        """All parameter arrays, for finiteness checks and serialization."""
        out = [self.embedding, self.readout_w1, self.readout_b1, self.readout_w2]
        for layer in self.layers:
            out += [layer.wq, layer.wk, layer.wm, layer.ws, layer.wv, layer.wr]
        return out


def init_et(seed: int = 0, channels: int = 64, heads: int = 4, layers: int = 2, rbf_count: int = 32,
            cutoff: float = 5.0, species=SYMBOLS) -> EtParams:
    """Untrained parameters: unit-variance embeddings, fan-in scaled projections."""
    rng = np.random.default_rng(seed)
    c = channels

    def lin(o, i):
        return rng.standard_normal((o, i)) / math.sqrt(i)

    stack = [EtLayer(lin(c, c), lin(c, c), lin(c, c), lin(c, c), lin(c, c), lin(c, rbf_count))
             for _ in range(layers)]
    return EtParams(channels, heads, rbf_count, cutoff,
                    embedding=rng.standard_normal((len(species), c)),
                    layers=stack,
                    readout_w1=lin(c, 2 * c), readout_b1=np.zeros(c),
                    readout_w2=rng.standard_normal(c) / math.sqrt(c), readout_b2=0.0,
                    species=species)


@dataclass(eq=False)
class EtState:
    h: np.ndarray  # (N, C)
    v: np.ndarray  # (N, C, 3)

    @property
    def n_atoms(self) -> int:
        return self.h.shape[0]


@dataclass(eq=False)
class EdgeEncoding:
    i: np.ndarray
    j: np.ndarray
    distances: np.ndarray
    directions: np.ndarray  # unit vectors from i to j
    rbf: np.ndarray  # (E, K), cutoff-enveloped
    fc: np.ndarray
    gauss: np.ndarray  # (E, K) before the envelope, kept for the backward pass
    dfc: np.ndarray

    def __len__(self):
        return len(self.i)


def _matmul(x, w, deterministic):
    """``x @ w.T`` with each output row independent of its position in ``x``."""
    if not deterministic or len(x) < 2:
        return x @ w.T
    order = np.lexsort(x.T[::-1])
    out = np.empty((x.shape[0], w.shape[0]))
    out[order] = x[order] @ w.T
    return out


def _mix(v, w, deterministic):
    """Apply channel mixing ``w`` to (N, C, 3) vector features."""
    n, c, _ = v.shape
    flat = v.transpose(0, 2, 1).reshape(n * 3, c)
    return _matmul(flat, w, deterministic).reshape(n, 3, w.shape[0]).transpose(0, 2, 1)


def embed(species, params: EtParams) -> EtState:
    species = np.asarray(species, dtype=np.int64)
    if len(species) and (species.min() < 0 or species.max() >= len(params.embedding)):
        raise UnsupportedSpeciesError("species without an embedding row")
    h = params.embedding[species].copy()
    return EtState(h, np.zeros(h.shape + (3,)))


def encode_edges(system, pairs: PairList, params: EtParams, counters: OpCounters | None = None) -> EdgeEncoding:
    """Gaussian RBFs on an even grid over [0, cutoff] times the cosine envelope."""
    sel = np.flatnonzero(pairs.distances <= params.cutoff) if pairs.cutoff > params.cutoff else np.arange(len(pairs))
    r = pairs.distances[sel]
    if len(r) and r.min() < MIN_DISTANCE:
        raise SingularityError("coincident atoms in the ET edge list")
    u = pairs.vectors[sel] / r[:, None]
    fc = cutoff_fn(r, params.cutoff)
    dfc = cutoff_fn_grad(r, params.cutoff)
    diff = r[:, None] - params.rbf_centers
    gauss = np.exp(-params.rbf_beta * diff * diff)
    e, k = gauss.shape
    stage_of(counters, "et_rbf").count(add=e * k + 2 * e, mul=2 * e * k + e * k + 3 * e + 4 * e, trans=e * k + 2 * e,
                                       read=e * 4 * FLOAT_BYTES, write=e * (k + 4) * FLOAT_BYTES)
    return EdgeEncoding(pairs.i[sel], pairs.j[sel], r, u, gauss * fc[:, None], fc, gauss, dfc)


@dataclass(eq=False)
class _LayerCache:
    h: np.ndarray
    v: np.ndarray
    q: np.ndarray
    k: np.ndarray
    m: np.ndarray
    sw: np.ndarray  # Wv s
    vw: np.ndarray  # Wv v
    rho: np.ndarray
    score: np.ndarray
    act: np.ndarray  # silu(score)
    alpha: np.ndarray  # (E, C)


def _heads(x, params):
    return x.reshape(x.shape[0], params.heads, params.head_dim)


def _layer_forward(state: EtState, edges: EdgeEncoding, layer: EtLayer, params: EtParams,
                   counters, index: int, deterministic: bool):
    h, v = state.h, state.v
    n, c = h.shape
    e, kk = len(edges), params.rbf_count
    nh = params.heads
    node = stage_of(counters, "et_node")
    q = _matmul(h, layer.wq, deterministic)
    k = _matmul(h, layer.wk, deterministic)
    m = _matmul(h, layer.wm, deterministic)
    s = _matmul(h, layer.ws, deterministic)
    sw = _matmul(s, layer.wv, deterministic)
    vw = _mix(v, layer.wv, deterministic)
    node.count(add=8 * n * c * c, mul=8 * n * c * c, read=(n * c * 5 + n * c * 3 + 5 * c * c) * FLOAT_BYTES,
               write=n * c * 8 * FLOAT_BYTES)

    ii, jj = edges.i, edges.j
    rho = _matmul(edges.rbf, layer.wr, deterministic)
    t = q[ii] * k[jj] * rho
    score = _heads(t, params).sum(axis=2) / math.sqrt(params.head_dim)
    act = silu(score)
    a = act * edges.fc[:, None]
    alpha = np.repeat(a, params.head_dim, axis=1)
    msg_h = alpha * m[jj]
    payload = vw[jj] + edges.directions[:, None, :] * sw[jj][:, :, None]
    msg_v = alpha[:, :, None] * payload
    h_new = h + ordered_scatter_add(ii, msg_h, n, deterministic)
    v_new = v + ordered_scatter_add(ii, msg_v, n, deterministic)
    # edge work: rho (2EKC), t (2EC), head sums (EC), scale/silu/envelope (4EH),
    # scalar message (2EC), vector payload (6EC) and message (3EC) and scatter (3EC)
    stage_of(counters, f"et_layer{index}").count(
        add=e * c * kk + e * c + e * c + 3 * e * c + 3 * e * c + e * nh,
        mul=e * c * kk + 2 * e * c + 3 * e * nh + e * c + 3 * e * c + 3 * e * c,
        trans=e * nh,
        gather=e * (5 * c + 3 * c),
        scatter=e * 4 * c,
        read=(e * (kk + 5 * c + 3 * c + 4) + 2 * e) * FLOAT_BYTES + 2 * e * INDEX_BYTES,
        write=e * 4 * c * FLOAT_BYTES,
    )
    cache = _LayerCache(h, v, q, k, m, sw, vw, rho, score, act, alpha)
    return EtState(h_new, v_new), cache


def et_layer(state: EtState, edges: EdgeEncoding, layer: EtLayer, params: EtParams,
             counters: OpCounters | None = None, index: int = 0, deterministic: bool = False) -> EtState:
    """One attention/message-passing update with residual connections."""
    return _layer_forward(state, edges, layer, params, counters, index, deterministic)[0]


@dataclass(eq=False)
class EtTape:
    positions: np.ndarray
    edges: EdgeEncoding
    caches: list
    state: EtState  # after the last layer
    vnorm: np.ndarray
    z: np.ndarray  # readout pre-activation
    per_atom: np.ndarray
    deterministic: bool = False
    valid: bool = True

    def invalidate(self):
        self.valid = False

    def check(self, positions=None):
        if not self.valid:
            raise StaleTapeError("ET tape was invalidated")
        if positions is not None and not np.array_equal(positions, self.positions):
            raise StaleTapeError("positions changed since the ET forward pass")


def et_energy(system: AtomicSystem, pairs: PairList | None, params: EtParams,
              counters: OpCounters | None = None, deterministic: bool = False):
    """Total energy and the tape for :func:`et_forces`.

    Per-atom energies are on ``tape.per_atom``; final features on ``tape.state``.
    """
    if pairs is None:
        pairs = build_pairs(system, params.cutoff)
    edges = encode_edges(system, pairs, params, counters)
    state = embed(system.species, params)
    n, c = state.h.shape
    stage_of(counters, "et_embed").count(gather=n * c, read=n * c * FLOAT_BYTES, write=n * 4 * c * FLOAT_BYTES)
    caches = []
    for index, layer in enumerate(params.layers):
        state, cache = _layer_forward(state, edges, layer, params, counters, index, deterministic)
        caches.append(cache)
    vnorm = np.sqrt((state.v * state.v).sum(axis=2) + NORM_EPS)
    x = np.concatenate([state.h, vnorm], axis=1)
    z = _matmul(x, params.readout_w1, deterministic) + params.readout_b1
    per_atom = _matmul(silu(z), params.readout_w2[None, :], deterministic)[:, 0] + params.readout_b2
    f = len(params.readout_b1)
    stage_of(counters, "et_readout").count(add=n * (3 * c + 2 * c * f + f + f), mul=n * (3 * c + 2 * c * f + 2 * f),
                                           trans=n * (c + f), read=n * 4 * c * FLOAT_BYTES,
                                           write=n * FLOAT_BYTES)
    tape = EtTape(system.positions, edges, caches, state, vnorm, z, per_atom, deterministic)
    return total_energy(per_atom), tape


def _layer_backward(gh, gv, cache: _LayerCache, edges: EdgeEncoding, layer: EtLayer, params: EtParams,
                    geo: dict, deterministic: bool, st):
    n, c = cache.h.shape
    e, kk = len(edges), params.rbf_count
    ii, jj = edges.i, edges.j
    u = edges.directions
    # residual paths
    gh_in, gv_in = gh.copy(), gv.copy()
    g_dh = gh[ii]  # (E, C)
    g_dv = gv[ii]  # (E, C, 3)
    m_j, sw_j = cache.m[jj], cache.sw[jj]
    payload = cache.vw[jj] + u[:, None, :] * sw_j[:, :, None]
    g_alpha = g_dh * m_j + (g_dv * payload).sum(axis=2)
    g_m = ordered_scatter_add(jj, cache.alpha * g_dh, n, deterministic)
    g_vw = ordered_scatter_add(jj, cache.alpha[:, :, None] * g_dv, n, deterministic)
    g_sw = ordered_scatter_add(jj, cache.alpha * (g_dv * u[:, None, :]).sum(axis=2), n, deterministic)
    geo["u"] += ((cache.alpha * sw_j)[:, :, None] * g_dv).sum(axis=1)

    g_a = _heads(g_alpha, params).sum(axis=2)
    geo["fc"] += (g_a * cache.act).sum(axis=1)
    g_score = g_a * edges.fc[:, None] * silu_grad(cache.score)
    g_t = np.repeat(g_score / math.sqrt(params.head_dim), params.head_dim, axis=1)
    q_i, k_j = cache.q[ii], cache.k[jj]
    g_q = ordered_scatter_add(ii, g_t * k_j * cache.rho, n, deterministic)
    g_k = ordered_scatter_add(jj, g_t * q_i * cache.rho, n, deterministic)
    g_rho = g_t * q_i * k_j
    geo["rbf"] += _matmul(g_rho, layer.wr.T, deterministic)

    gv_in += _mix(g_vw, layer.wv.T, deterministic)
    g_s = _matmul(g_sw, layer.wv.T, deterministic)
    gh_in += (_matmul(g_q, layer.wq.T, deterministic) + _matmul(g_k, layer.wk.T, deterministic)
              + _matmul(g_m, layer.wm.T, deterministic) + _matmul(g_s, layer.ws.T, deterministic))
    st.count(add=e * (2 * c * kk + 16 * c) + 8 * n * c * c + 4 * n * c,
             mul=e * (c * kk + 22 * c) + 8 * n * c * c,
             trans=e * params.heads * 2,
             gather=e * 10 * c, scatter=e * 6 * c,
             read=(e * (kk + 14 * c) + n * c * 12 + 6 * c * c) * FLOAT_BYTES + 2 * e * INDEX_BYTES,
             write=(e * (kk + 6 * c + 4) + n * c * 4) * FLOAT_BYTES)
    return gh_in, gv_in


def et_backward(tape: EtTape, params: EtParams, counters: OpCounters | None = None,
                positions=None) -> np.ndarray:
    """dE/dr for every atom by reverse accumulation through readout, layers and edges."""
    tape.check(positions)
    det = tape.deterministic
    st = stage_of(counters, "et_backward")
    h, v = tape.state.h, tape.state.v
    n, c = h.shape
    if n == 0:
        return np.zeros((0, 3))
    edges = tape.edges
    e = len(edges)
    gz = params.readout_w2[None, :] * silu_grad(tape.z)
    gx = _matmul(gz, params.readout_w1.T, det)
    gh = gx[:, :c]
    gv = gx[:, c:, None] * v / tape.vnorm[:, :, None]
    f = len(params.readout_b1)
    st.count(add=n * 2 * c * f, mul=n * (2 * c * f + 2 * f + 4 * c), trans=n * f,
             read=n * (2 * c + f + 3 * c) * FLOAT_BYTES, write=n * 4 * c * FLOAT_BYTES)
    geo = {"u": np.zeros((e, 3)), "fc": np.zeros(e), "rbf": np.zeros((e, params.rbf_count))}
    for layer, cache in zip(reversed(params.layers), reversed(tape.caches)):
        gh, gv = _layer_backward(gh, gv, cache, edges, layer, params, geo, det, st)
    # edge encoding -> distance and direction -> coordinates
    r = edges.distances
    diff = r[:, None] - params.rbf_centers
    d_rbf = edges.gauss * (edges.dfc[:, None] - 2.0 * params.rbf_beta * diff * edges.fc[:, None])
    g_r = (geo["rbf"] * d_rbf).sum(axis=1) + geo["fc"] * edges.dfc
    u = edges.directions
    gu = geo["u"]
    g_d = (gu - (gu * u).sum(axis=1)[:, None] * u) / r[:, None] + g_r[:, None] * u
    kk = params.rbf_count
    st.count(add=e * (3 * kk + 12), mul=e * (4 * kk + 14), trans=e,
             read=e * (2 * kk + 8) * FLOAT_BYTES, write=e * 3 * FLOAT_BYTES)
    grad = ordered_scatter_add(edges.j, g_d, n, det) - ordered_scatter_add(edges.i, g_d, n, det)
    st.count(add=2 * e * 3 + n * 3, scatter=2 * e * 3)
    return grad


def et_forces(tape: EtTape, params: EtParams, counters: OpCounters | None = None, positions=None) -> np.ndarray:
    return -et_backward(tape, params, counters, positions)


class EtPotential:
    """Equivariant transformer as a force provider."""

    name = "et"
    stages = ("neighbors", "et_forward", "et_backward")

    def __init__(self, params: EtParams | None = None, deterministic: bool = False, neighbor_method: str = "cell"):
        self.params = params if params is not None else init_et()
        self.deterministic = deterministic
        self.neighbor_method = neighbor_method

    def _evaluate(self, system: AtomicSystem) -> PotentialResult:
        counters = OpCounters()
        timings = {}
        n = system.n_atoms
        if n == 0:
            return PotentialResult(0.0, np.zeros(0), np.zeros((0, 3)), counters, timings)
        with timed(timings, "neighbors"):
            pairs = build_pairs(system, self.params.cutoff, self.neighbor_method)
        with timed(timings, "et_forward"):
            energy, tape = et_energy(system, pairs, self.params, counters, self.deterministic)
        with timed(timings, "et_backward"):
            forces = et_forces(tape, self.params, counters)
        return PotentialResult(energy, tape.per_atom, forces, counters, timings)

    def evaluate(self, system: AtomicSystem, mask=None) -> PotentialResult:
        return on_subset(system, mask, self._evaluate)
