"""
Discrete Ito Calculus
=====================

Ito sums against the driver B and against the projected martingale
dm = P dB, Wick exponentials, and ordered iterated integrals over the
simplex k_1 > k_2 > ... > k_q used by the chaos expansion.

Every function works on a batch of paths and returns one value per path.
"""

import json
import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement, product
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .core_paths import BrownianPath, CameronMartinFn
from .errors import InvalidArgumentError, SimulationError
from .projection import ProjectorSequence

logger = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 3
MAX_LOG_WEIGHT = 700.0
# float64 elements held by one recursion chunk
CHUNK_ELEMENTS = 2 ** 24

_BLOCK_LETTERS = "abcdefgh"
_DIM_LETTERS = "ijklnopq"


def _as_batch(values: np.ndarray, n_paths: int, n_steps: int, dim: int, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = np.broadcast_to(values, (n_paths,) + values.shape)
    if values.shape != (n_paths, n_steps, dim):
        raise InvalidArgumentError(
            f"{what} has shape {values.shape}, expected ({n_paths}, {n_steps}, {dim}) or ({n_steps}, {dim})"
        )
    return values


def stochastic_exponential(integrand: np.ndarray, increments: np.ndarray, dt: float) -> np.ndarray:
    """exp(sum_k xi_k . dB_k - 1/2 sum_k |xi_k|^2 dt), one value per path"""
    log_weight = np.sum(integrand * increments, axis=(1, 2)) - 0.5 * np.sum(integrand * integrand, axis=(1, 2)) * dt
    if not np.all(np.isfinite(log_weight)) or np.any(log_weight > MAX_LOG_WEIGHT):
        raise SimulationError("stochastic exponential overflows")
    return np.exp(log_weight)


def ito_integral(xi: np.ndarray, B: BrownianPath) -> np.ndarray:
    """sum_k xi_k . dB_k for an adapted integrand of shape (M, N, d) or (N, d)"""
    xi = _as_batch(xi, B.n_paths, B.n_steps, B.dim, "integrand")
    return np.einsum("mkd,mkd->m", xi, B.increments)


def projected_increments(P: ProjectorSequence, B: BrownianPath) -> np.ndarray:
    """dm_k = P_k dB_k, shape (M, N, d)"""
    if P.mats.shape[:3] != B.increments.shape:
        raise InvalidArgumentError(
            f"projectors {P.mats.shape} do not match increments {B.increments.shape}"
        )
    return P.apply(B.increments)


def wick_exponential(h: CameronMartinFn, B: BrownianPath) -> np.ndarray:
    hdot = _as_batch(h.hdot, B.n_paths, B.n_steps, B.dim, "hdot")
    return stochastic_exponential(hdot, B.increments, 1.0 / B.n_steps)


def projected_wick(h: CameronMartinFn, P: ProjectorSequence, B: BrownianPath) -> np.ndarray:
    """Wick exponential of the projected integrand P_k h-dot_k"""
    hdot = _as_batch(h.hdot, B.n_paths, B.n_steps, B.dim, "hdot")
    if P.mats.shape[:3] != B.increments.shape:
        raise InvalidArgumentError("projectors do not match the Brownian batch")
    return stochastic_exponential(P.apply(hdot), B.increments, 1.0 / B.n_steps)


def block_edges(n_steps: int, n_blocks: Optional[int] = None) -> np.ndarray:
    """Step boundaries of n_blocks near-equal blocks; None means one block per step"""
    n_blocks = n_steps if n_blocks is None else int(n_blocks)
    if not 1 <= n_blocks <= n_steps:
        raise InvalidArgumentError(f"n_blocks must lie in [1, {n_steps}], got {n_blocks}")
    return np.round(np.linspace(0, n_steps, n_blocks + 1)).astype(int)


def _step_blocks(edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, np.arange(edges[-1]), side="right") - 1


def simplex_block_tuples(n_blocks: int, order: int) -> List[Tuple[int, ...]]:
    """Non-increasing block tuples (b_1 >= ... >= b_q), outermost first"""
    return [tuple(reversed(c)) for c in combinations_with_replacement(range(n_blocks), order)]


@dataclass(frozen=True)
class SimplexKernel:
    """
    Piecewise-constant kernel on the ordered simplex.

    ``coeffs`` has shape (B,)*q + (d,)*q; entry [b_1..b_q, i_1..i_q] weighs
    dm^{i_1}_{k_1} ... dm^{i_q}_{k_q} for fine steps k_1 > ... > k_q lying in
    blocks b_1 >= ... >= b_q. Entries off the simplex must be zero.
    """

    order: int
    dim: int
    block_edges: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise InvalidArgumentError("kernel order must be at least 1")
        edges = np.asarray(self.block_edges, dtype=int)
        if edges.ndim != 1 or edges[0] != 0 or np.any(np.diff(edges) <= 0):
            raise InvalidArgumentError("block edges must start at 0 and increase strictly")
        n_blocks = edges.shape[0] - 1
        coeffs = np.asarray(self.coeffs, dtype=float)
        expected = (n_blocks,) * self.order + (self.dim,) * self.order
        if coeffs.shape != expected:
            raise InvalidArgumentError(f"kernel coefficients have shape {coeffs.shape}, expected {expected}")
        if not np.all(np.isfinite(coeffs)):
            raise InvalidArgumentError("kernel coefficients must be finite")
        support = np.zeros((n_blocks,) * self.order, dtype=bool)
        for blocks in simplex_block_tuples(n_blocks, self.order):
            support[blocks] = True
        off = np.abs(coeffs).reshape(support.shape + (-1,)).max(axis=-1)
        if np.any(off[~support] > 0):
            raise InvalidArgumentError("kernel has coefficients outside the simplex k_1 > ... > k_q")
        coeffs.setflags(write=False)
        object.__setattr__(self, "block_edges", edges)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_blocks(self) -> int:
        return self.block_edges.shape[0] - 1

    @property
    def n_steps(self) -> int:
        return int(self.block_edges[-1])

    @classmethod
    def zero(cls, order: int, dim: int, n_steps: int, n_blocks: Optional[int] = None) -> "SimplexKernel":
        edges = block_edges(n_steps, n_blocks)
        b = edges.shape[0] - 1
        return cls(order, dim, edges, np.zeros((b,) * order + (dim,) * order))

    @classmethod
    def constant(cls, tensor: np.ndarray, n_steps: int, n_blocks: Optional[int] = None) -> "SimplexKernel":
        """The same (R^d)^{(x)q} tensor on every simplex block"""
        tensor = np.asarray(tensor, dtype=float)
        order, dim = tensor.ndim, tensor.shape[0]
        edges = block_edges(n_steps, n_blocks)
        b = edges.shape[0] - 1
        coeffs = np.zeros((b,) * order + tensor.shape)
        for blocks in simplex_block_tuples(b, order):
            coeffs[blocks] = tensor
        return cls(order, dim, edges, coeffs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "order": self.order,
            "n_steps": self.n_steps,
            "dim": self.dim,
            "block_edges": [int(e) for e in self.block_edges],
            "coeffs": [float(c) for c in self.coeffs.ravel(order="C")],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, payload: Union[str, Dict[str, Any]]) -> "SimplexKernel":
        data = json.loads(payload) if isinstance(payload, str) else payload
        try:
            order, dim = int(data["order"]), int(data["dim"])
            edges = np.asarray(data.get("block_edges", range(int(data["n_steps"]) + 1)), dtype=int)
            flat = np.asarray(data["coeffs"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidArgumentError(f"malformed kernel document: {e}") from e
        if "n_steps" in data and int(data["n_steps"]) != int(edges[-1]):
            raise InvalidArgumentError("kernel n_steps does not match its block edges")
        shape = (edges.shape[0] - 1,) * order + (dim,) * order
        if flat.size != int(np.prod(shape)):
            raise InvalidArgumentError(f"kernel has {flat.size} coefficients, expected {int(np.prod(shape))}")
        return cls(order, dim, edges, flat.reshape(shape))


def _chunk_size(n_paths: int, per_path: int) -> int:
    return max(1, min(n_paths, CHUNK_ELEMENTS // max(per_path, 1)))


def _absorb(tensor: np.ndarray, block: int, dm_k: np.ndarray, batched: bool) -> np.ndarray:
    """Fix the innermost free slot of tensor at ``block`` and contract it with dm_k"""
    free = (tensor.ndim - (1 if batched else 0)) // 2
    axis = free if batched else free - 1
    sliced = np.take(tensor, block, axis=axis)
    if batched:
        return np.einsum("m...i,mi->m...", sliced, dm_k)
    return np.einsum("...i,mi->m...", sliced, dm_k)


def iterated_integral(f: SimplexKernel, dm: np.ndarray, max_order: int = DEFAULT_MAX_ORDER) -> np.ndarray:
    """
    Ordered iterated sum over k_1 > ... > k_q of <f, dm_{k_1} (x) ... (x) dm_{k_q}>.

    Forward recursion over fine steps: partial sums contracting the innermost
    r slots are refreshed outermost-first, so each step only ever meets
    strictly earlier steps.
    """
    if f.order > max_order:
        raise InvalidArgumentError(f"kernel order {f.order} exceeds the maximum {max_order}")
    dm = np.asarray(dm, dtype=float)
    if dm.ndim == 2:
        dm = dm[None]
    if dm.ndim != 3 or dm.shape[1] != f.n_steps or dm.shape[2] != f.dim:
        raise InvalidArgumentError(
            f"increments of shape {dm.shape} do not fit a kernel on N={f.n_steps}, d={f.dim}"
        )
    q, nb, d = f.order, f.n_blocks, f.dim
    blocks = _step_blocks(f.block_edges)
    n_paths = dm.shape[0]
    out = np.empty(n_paths)
    chunk = _chunk_size(n_paths, (nb * d) ** max(q - 1, 1))
    for start in range(0, n_paths, chunk):
        part = dm[start:start + chunk]
        m = part.shape[0]
        partial = [np.zeros((m,) + (nb,) * (q - r) + (d,) * (q - r)) for r in range(1, q)]
        total = np.zeros(m)
        for k in range(f.n_steps):
            c, dm_k = blocks[k], part[:, k]
            if q == 1:
                total += dm_k @ f.coeffs[c]
                continue
            total += np.einsum("mi,mi->m", partial[q - 2][:, c], dm_k)
            for r in range(q - 1, 1, -1):
                partial[r - 1] += _absorb(partial[r - 2], c, dm_k, batched=True)
            partial[0] += _absorb(f.coeffs, c, dm_k, batched=False)
        out[start:start + m] = total
    return out


def block_iterated_integrals(dm: np.ndarray, edges: np.ndarray, order: int) -> Tuple[np.ndarray, List[Tuple[Tuple[int, ...], Tuple[int, ...]]]]:
    """
    Iterated integrals of every block-indicator kernel of the given order.

    Returns the (M, n_features) design and the (blocks, dims) label of each
    column, blocks non-increasing.
    """
    dm = np.asarray(dm, dtype=float)
    if dm.ndim != 3:
        raise InvalidArgumentError(f"increments must have shape (M, N, d), got {dm.shape}")
    edges = np.asarray(edges, dtype=int)
    if edges[-1] != dm.shape[1]:
        raise InvalidArgumentError("block edges do not cover the grid")
    if order < 1:
        raise InvalidArgumentError("order must be at least 1")
    n_paths, n_steps, d = dm.shape
    nb = edges.shape[0] - 1
    blocks = _step_blocks(edges)

    labels = [(b, i) for b in simplex_block_tuples(nb, order) for i in product(range(d), repeat=order)]
    flat_index = [np.ravel_multi_index(b + i, (nb,) * order + (d,) * order) for b, i in labels]

    design = np.empty((n_paths, len(labels)))
    chunk = _chunk_size(n_paths, (nb * d) ** order)
    for start in range(0, n_paths, chunk):
        part = dm[start:start + chunk]
        m = part.shape[0]
        layers = [np.ones(m)] + [np.zeros((m,) + (nb,) * r + (d,) * r) for r in range(1, order + 1)]
        for k in range(n_steps):
            c, dm_k = blocks[k], part[:, k]
            for r in range(order, 0, -1):
                inner_b, inner_d = _BLOCK_LETTERS[: r - 1], _DIM_LETTERS[: r - 1]
                spec = f"mz,m{inner_b}{inner_d}->m{inner_b}z{inner_d}"
                layers[r][:, c] += np.einsum(spec, dm_k, layers[r - 1])
        design[start:start + m] = layers[order].reshape(m, -1)[:, flat_index]
    return design, labels
