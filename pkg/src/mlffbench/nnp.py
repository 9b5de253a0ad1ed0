"""Element-specific MLP ensembles on top of AEVs, with a hand-written reverse pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .aev import AevParams, aev_backward, compute_aev
from .counters import FLOAT_BYTES, OpCounters, stage_of
from .errors import StaleTapeError, UnsupportedSpeciesError
from .neighbors import build_pairs, build_triplets
from .potential import PotentialResult, on_subset, timed, total_energy
from .system import SYMBOLS, AtomicSystem

DEFAULT_WIDTHS = (1008, 256, 192, 160, 1)


def softplus(x, alpha):
    return alpha * np.logaddexp(0.0, x / alpha)


def softplus_grad(x, alpha):
    return expit(x / alpha)


@dataclass(eq=False)
class MlpParams:
    """Weights stored (out, in), row-major; activation on every hidden layer."""

    weights: list
    biases: list
    alpha: float = 0.1

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def forward(self, x, keep=False):
        pre = []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            if k == last:
                h = z
            else:
                if keep:
                    pre.append(z)
                h = softplus(z, self.alpha)
        return h[:, 0], pre

    def backward(self, pre, upstream):
        """d(sum upstream * out)/dx for the inputs that produced ``pre``."""
        g = upstream[:, None] * self.weights[-1]
        for k in range(len(self.weights) - 2, -1, -1):
            g = g * softplus_grad(pre[k], self.alpha)
            g = g @ self.weights[k]
        return g


@dataclass(eq=False)
class NnpModel:
    members: dict  # symbol -> list[MlpParams]
    energy_shifts: dict = field(default_factory=dict)  # symbol -> kcal/mol

    @property
    def species(self) -> tuple:
        return tuple(self.members)

    @property
    def ensemble_size(self) -> int:
        return len(next(iter(self.members.values())))

    @property
    def widths(self) -> tuple:
        return next(iter(self.members.values()))[0].widths


def init_model(seed: int = 0, widths=DEFAULT_WIDTHS, ensemble_size: int = 1, alpha: float = 0.1,
               species=SYMBOLS, weight_scale: float = 1.0) -> NnpModel:
    """Untrained ensemble: Gaussian weights with std ``weight_scale / sqrt(fan_in)``, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or widths[-1] != 1:
        raise ValueError("widths must end in 1")
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    rng = np.random.default_rng(seed)
    members = {}
    for sym in species:
        nets = []
        for _ in range(ensemble_size):
            ws = [rng.standard_normal((o, i)) * (weight_scale / np.sqrt(i)) for i, o in zip(widths[:-1], widths[1:])]
            bs = [np.zeros(o) for o in widths[1:]]
            nets.append(MlpParams(ws, bs, alpha))
        members[sym] = nets
    return NnpModel(members, {sym: 0.0 for sym in species})


@dataclass(eq=False)
class NnpTape:
    aev: np.ndarray
    species: np.ndarray
    groups: list  # (symbol, atom indices, [pre-activations per member])
    valid: bool = True

    def invalidate(self):
        self.valid = False


def _model_for(model: NnpModel, sym: str):
    try:
        return model.members[sym]
    except KeyError:
        raise UnsupportedSpeciesError(f"no MLP for element {sym}") from None


def _canonical_rows(x: np.ndarray) -> np.ndarray:
    # dense kernels may round differently depending on a row's position in the
    # batch; sorting rows by content makes the batch independent of atom order
    if len(x) < 2:
        return np.arange(len(x))
    return np.lexsort(x.T[::-1])


def nnp_energy(aev, species, model: NnpModel, counters: OpCounters | None = None,
               deterministic: bool = False):
    """Total energy, per-atom energies and the activation tape.

    With ``deterministic`` the rows of each element batch are put in a
    content-defined order, so permuting atoms permutes per-atom energies and
    gradients bit for bit.
    """
    values = aev.values if hasattr(aev, "values") else np.asarray(aev)
    species = np.asarray(species)
    if values.shape[0] != len(species):
        raise ValueError("AEV rows and species differ in length")
    n = len(species)
    per_atom = np.zeros(n)
    groups = []
    st = stage_of(counters, "nnp_forward")
    sum_st = stage_of(counters, "energy_sum")
    for s in np.unique(species):
        sym = SYMBOLS[s]
        nets = _model_for(model, sym)
        idx = np.flatnonzero(species == s)
        if deterministic:
            idx = idx[_canonical_rows(values[idx])]
        x = values[idx]
        acc = np.zeros(len(idx))
        pres = []
        for net in nets:
            out, pre = net.forward(x, keep=True)
            acc += out
            pres.append(pre)
            rows = len(idx)
            for w in net.weights:
                o, i = w.shape
                st.count(add=rows * i * o, mul=rows * i * o,
                         read=(w.size + o + rows * i) * FLOAT_BYTES, write=rows * o * FLOAT_BYTES)
            st.count(trans=rows * sum(w.shape[0] for w in net.weights[:-1]))
        per_atom[idx] = acc / len(nets) + model.energy_shifts.get(sym, 0.0)
        sum_st.count(add=len(idx) * (len(nets) + 1), mul=len(idx))
        groups.append((sym, idx, pres))
    sum_st.count(add=n)
    return total_energy(per_atom), per_atom, NnpTape(values, species, groups)


def nnp_backward(tape: NnpTape, model: NnpModel, counters: OpCounters | None = None) -> np.ndarray:
    """dE_T/dAEV for every atom."""
    if not tape.valid:
        raise StaleTapeError("NNP tape was invalidated")
    st = stage_of(counters, "nnp_backward")
    grad = np.zeros_like(tape.aev)
    for sym, idx, pres in tape.groups:
        nets = _model_for(model, sym)
        up = np.full(len(idx), 1.0 / len(nets))
        g = np.zeros((len(idx), tape.aev.shape[1]))
        for net, pre in zip(nets, pres):
            g += net.backward(pre, up)
            rows = len(idx)
            for w in net.weights:
                o, i = w.shape
                st.count(add=rows * i * o, mul=rows * i * o + rows * o,
                         read=(w.size + rows * o) * FLOAT_BYTES, write=rows * i * FLOAT_BYTES)
            st.count(trans=rows * sum(w.shape[0] for w in net.weights[:-1]))
        grad[idx] = g
    return grad


def count_nnp_ops(model_or_widths, species_histogram, ensemble_size: int | None = None,
                  convention: str = "flops") -> int:
    """Analytic dense-layer cost of one forward pass.

    ``convention="flops"`` counts a multiply and an add per weight (bias add
    included); ``"macs"`` counts multiply-accumulates.  Activations are not
    included.  ``species_histogram`` maps symbol (or index) to atom count, or
    is a plain atom count.
    """
    if isinstance(model_or_widths, NnpModel):
        widths = model_or_widths.widths
        ens = model_or_widths.ensemble_size if ensemble_size is None else ensemble_size
    else:
        widths = tuple(model_or_widths)
        ens = 1 if ensemble_size is None else ensemble_size
    n_atoms = species_histogram if np.isscalar(species_histogram) else sum(dict(species_histogram).values())
    macs = sum(i * o for i, o in zip(widths[:-1], widths[1:]))
    per_atom = {"flops": 2 * macs, "macs": macs}[convention]
    return int(n_atoms) * per_atom * ens


class AniPotential:
    """AEV + NNP ensemble as a force provider."""

    name = "ani"
    stages = ("neighbors", "aev_forward", "energy_forward", "force_backward")

    def __init__(self, model: NnpModel | None = None, aev_params: AevParams | None = None,
                 strategy: str = "fused", deterministic: bool = False, neighbor_method: str = "cell"):
        self.model = model if model is not None else init_model()
        self.aev_params = aev_params or AevParams()
        self.strategy = strategy
        self.deterministic = deterministic
        self.neighbor_method = neighbor_method

    def _evaluate(self, system: AtomicSystem) -> PotentialResult:
        counters = OpCounters()
        timings = {}
        n = system.n_atoms
        if n == 0:
            return PotentialResult(0.0, np.zeros(0), np.zeros((0, 3)), counters, timings)
        with timed(timings, "neighbors"):
            pairs = build_pairs(system, self.aev_params.radial_cutoff, self.neighbor_method)
            triplets = build_triplets(pairs, self.aev_params.angular_cutoff) if self.strategy == "staged" else None
        with timed(timings, "aev_forward"):
            aev, tape = compute_aev(system, pairs, self.aev_params, self.strategy, triplets,
                                    counters, self.deterministic)
        with timed(timings, "energy_forward"):
            energy, per_atom, ntape = nnp_energy(aev, system.species, self.model, counters, self.deterministic)
        with timed(timings, "force_backward"):
            g = nnp_backward(ntape, self.model, counters)
            grad = aev_backward(tape, g, counters=counters)
        return PotentialResult(energy, per_atom, -grad, counters, timings)

    def evaluate(self, system: AtomicSystem, mask=None) -> PotentialResult:
        return on_subset(system, mask, self._evaluate)
