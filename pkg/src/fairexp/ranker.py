"""Online pairwise logistic regression with confidence-interval exploration.

The ranker scores documents linearly and models pairwise preferences with
a sigmoid link. Every observed preference pair contributes a rank-one
update to an information matrix; the Mahalanobis norm of a difference
vector under its inverse yields a confidence width for that pair's
predicted order. Pairs whose interval excludes 1/2 are "certain", the
rest "uncertain"; candidates partition into blocks whose cross-block
orders are all certain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import QueryCandidates


class DimensionError(ValueError):
    """Raised on feature-dimension mismatches."""


class PartitionError(ValueError):
    """Raised when certain orders between blocks form a directed cycle."""

    def __init__(self, message: str, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class NumericError(RuntimeError):
    """Raised when the loss or gradient turns non-finite."""


CHECKPOINT_VERSION = 1
GRAD_TOL = 1e-6
MAX_NEWTON_ITERS = 100


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


class _PairBuffer:
    """Growable store of (difference vector, preference label) pairs."""

    def __init__(self, d: int):
        self.d = d
        self._x = np.empty((16, d), dtype=np.float64)
        self._y = np.empty(16, dtype=np.float64)
        self.n = 0

    def extend(self, diffs: np.ndarray, labels: np.ndarray) -> None:
        m = len(labels)
        if m == 0:
            return
        while self.n + m > len(self._y):
            self._x = np.concatenate([self._x, np.empty_like(self._x)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._x[self.n : self.n + m] = diffs
        self._y[self.n : self.n + m] = labels
        self.n += m

    @property
    def x(self) -> np.ndarray:
        return self._x[: self.n]

    @property
    def y(self) -> np.ndarray:
        return self._y[: self.n]


@dataclass
class RankerState:
    """Model parameters plus the accumulated pair evidence.

    ``info_matrix`` equals lam * I plus the sum of outer products of all
    buffered difference vectors, so it stays symmetric positive definite.
    ``q_norm`` is the assumed bound on the parameter norm, kept for the
    theoretical width multiplier.
    """

    theta: np.ndarray
    info_matrix: np.ndarray
    lam: float
    round: int = 0
    q_norm: float = 1.0
    pairs: _PairBuffer = None
    _info_inv: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, d: int, lam: float, q_norm: float = 1.0) -> "RankerState":
        if lam <= 0:
            raise ValueError("lam must be positive")
        return cls(
            theta=np.zeros(d),
            info_matrix=lam * np.eye(d),
            lam=lam,
            round=0,
            q_norm=q_norm,
            pairs=_PairBuffer(d),
        )

    @property
    def d(self) -> int:
        return len(self.theta)

    def info_inverse(self) -> np.ndarray:
        if self._info_inv is None:
            self._info_inv = np.linalg.inv(self.info_matrix)
        return self._info_inv


@dataclass
class PairOrderSets:
    """Certain directed pairs (winner, loser) and uncertain unordered pairs."""

    certain: set[tuple[int, int]]
    uncertain: set[tuple[int, int]]

    def n_pairs(self) -> int:
        return len(self.certain) + len(self.uncertain)


@dataclass
class BlockPartition:
    """Ordered blocks of document indices; all cross-block orders are certain."""

    blocks: list[list[int]]

    def documents(self) -> list[int]:
        return [doc for block in self.blocks for doc in block]


def _check_dim(state: RankerState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.d:
        raise DimensionError(f"feature dimension {x.shape[-1]} != model dimension {state.d}")
    return x


def score(state: RankerState, x) -> float:
    """Linear relevance score of one document."""
    return float(_check_dim(state, x) @ state.theta)


def score_all(state: RankerState, features: np.ndarray) -> np.ndarray:
    return _check_dim(state, features) @ state.theta


def pairwise_prob(state: RankerState, x_i, x_j) -> float:
    """Predicted probability that document i ranks above document j."""
    diff = _check_dim(state, x_i) - _check_dim(state, x_j)
    return float(sigmoid(diff @ state.theta))


def confidence_width(state: RankerState, x_i, x_j, alpha: float) -> float:
    """alpha-scaled Mahalanobis norm of the pair's difference vector."""
    diff = _check_dim(state, x_i) - _check_dim(state, x_j)
    quad = float(diff @ state.info_inverse() @ diff)
    return alpha * np.sqrt(max(quad, 0.0))


def classify_pairs(state: RankerState, candidates: QueryCandidates, alpha: float) -> PairOrderSets:
    """Split all candidate pairs into certain (directed) and uncertain sets.

    A pair is certain when the predicted preference probability stays on
    one side of 1/2 by more than the confidence width; an interval that
    touches 1/2 exactly counts as uncertain.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates to classify")
    feats = _check_dim(state, candidates.feature_matrix())
    n = len(candidates)
    idx_i, idx_j = np.triu_indices(n, k=1)
    diffs = feats[idx_i] - feats[idx_j]
    probs = sigmoid(diffs @ state.theta)
    minv = state.info_inverse()
    widths = alpha * np.sqrt(np.maximum(np.einsum("pd,de,pe->p", diffs, minv, diffs), 0.0))
    certain: set[tuple[int, int]] = set()
    uncertain: set[tuple[int, int]] = set()
    for i, j, p, w in zip(idx_i, idx_j, probs, widths):
        if p - w > 0.5:
            certain.add((int(i), int(j)))
        elif p + w < 0.5:
            certain.add((int(j), int(i)))
        else:
            uncertain.add((int(i), int(j)))
    return PairOrderSets(certain=certain, uncertain=uncertain)


def partition_blocks(candidates: QueryCandidates, order_sets: PairOrderSets) -> BlockPartition:
    """Group candidates into ordered blocks separated only by certain orders.

    Blocks are the connected components of the uncertain-pair graph. Any
    two distinct components are fully connected by certain pairs, so their
    directions must agree; disagreement (a directed cycle between
    components) is surfaced as an error rather than silently repaired.
    """
    n = len(candidates)
    expected = n * (n - 1) // 2
    if order_sets.n_pairs() != expected:
        raise ValueError(f"order sets cover {order_sets.n_pairs()} pairs, expected {expected}")

    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in order_sets.uncertain:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    members: dict[int, list[int]] = {}
    for doc in range(n):
        members.setdefault(find(doc), []).append(doc)
    roots = sorted(members)
    comp_index = {r: ci for ci, r in enumerate(roots)}
    m = len(roots)

    edges: dict[int, set[int]] = {ci: set() for ci in range(m)}
    witness: dict[tuple[int, int], tuple[int, int]] = {}
    for i, j in order_sets.certain:
        ci, cj = comp_index[find(i)], comp_index[find(j)]
        if ci == cj:
            continue
        if cj not in edges[ci]:
            edges[ci].add(cj)
            witness[(ci, cj)] = (i, j)

    indegree = [0] * m
    for ci in range(m):
        for cj in edges[ci]:
            indegree[cj] += 1
    queue = sorted(ci for ci in range(m) if indegree[ci] == 0)
    topo: list[int] = []
    while queue:
        ci = queue.pop(0)
        topo.append(ci)
        for cj in sorted(edges[ci]):
            indegree[cj] -= 1
            if indegree[cj] == 0:
                queue.append(cj)
        queue.sort()
    if len(topo) != m:
        cycle = _find_component_cycle(edges, m)
        pairs = [witness[(cycle[i], cycle[i + 1])] for i in range(len(cycle) - 1)]
        raise PartitionError(
            f"certain orders are cyclic across blocks (witness pairs {pairs})", cycle=cycle
        )
    return BlockPartition(blocks=[sorted(members[roots[ci]]) for ci in topo])


def _find_component_cycle(edges: dict[int, set[int]], m: int) -> list[int]:
    color = [0] * m
    stack: list[int] = []

    def dfs(u: int):
        color[u] = 1
        stack.append(u)
        for v in sorted(edges[u]):
            if color[v] == 1:
                return stack[stack.index(v) :] + [v]
            if color[v] == 0:
                found = dfs(v)
                if found:
                    return found
        color[u] = 2
        stack.pop()
        return None

    for u in range(m):
        if color[u] == 0:
            found = dfs(u)
            if found:
                return found
    return []


def infer_pairs(
    displayed_features: np.ndarray, clicks
) -> tuple[np.ndarray, np.ndarray]:
    """Turn clicks on a displayed list into preference difference vectors.

    Every clicked document is preferred over every unclicked document at
    or above the last clicked position; positions below the last click
    carry no signal. Returns (difference matrix, labels), labels all 1.
    """
    clicks = list(clicks)
    clicked = [p for p, c in enumerate(clicks) if c]
    if not clicked:
        d = displayed_features.shape[1] if displayed_features.ndim == 2 else 0
        return np.empty((0, d)), np.empty(0)
    last = clicked[-1]
    unclicked = [p for p in range(last + 1) if not clicks[p]]
    diffs = [
        displayed_features[m] - displayed_features[n] for m in clicked for n in unclicked
    ]
    if not diffs:
        return np.empty((0, displayed_features.shape[1])), np.empty(0)
    return np.stack(diffs), np.ones(len(diffs))


def _loss_grad(theta: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float):
    z = x @ theta
    # cross-entropy of sigmoid(z) against y, in the softplus form
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * theta @ theta)
    grad = x.T @ (sigmoid(z) - y) + lam * theta
    return loss, grad


def update(state: RankerState, diffs: np.ndarray, labels: np.ndarray) -> RankerState:
    """Fold new preference pairs into the state and re-fit the parameters.

    The information matrix gains the new outer products; the parameter
    vector is re-optimized over the full pair history by damped Newton
    iterations warm-started at the previous value, stopping at gradient
    norm 1e-6 or 100 iterations. The final loss never exceeds the warm
    start's.
    """
    diffs = np.asarray(diffs, dtype=np.float64).reshape(-1, state.d)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if len(diffs) != len(labels):
        raise ValueError("diffs and labels disagree in length")
    state.pairs.extend(diffs, labels)
    if len(diffs):
        state.info_matrix = state.info_matrix + diffs.T @ diffs
        state._info_inv = None
    state.round += 1

    x, y = state.pairs.x, state.pairs.y
    if state.pairs.n == 0:
        state.theta = np.zeros(state.d)
        return state

    theta = state.theta.copy()
    loss, grad = _loss_grad(theta, x, y, state.lam)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite loss at warm start (round {state.round})")
    for _ in range(MAX_NEWTON_ITERS):
        if np.linalg.norm(grad) <= GRAD_TOL:
            break
        z = x @ theta
        s = sigmoid(z)
        w = s * (1.0 - s)
        hess = (x * w[:, None]).T @ x + state.lam * np.eye(state.d)
        step = np.linalg.solve(hess, grad)
        # backtracking keeps the loss monotone even far from the optimum
        stepsize = 1.0
        for _ in range(50):
            cand = theta - stepsize * step
            cand_loss, cand_grad = _loss_grad(cand, x, y, state.lam)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                theta, loss, grad = cand, cand_loss, cand_grad
                break
            stepsize *= 0.5
        else:
            break
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient during update (round {state.round})")
    state.theta = theta
    return state


def alpha_bound(
    state: RankerState, k_mu: float, c_mu: float, r_noise: float, q_norm: float, delta: float
) -> float:
    """Theoretical width multiplier from the confidence analysis.

    Takes the link-Lipschitz constants, the sub-Gaussian click-noise
    scale, the parameter-norm bound and the failure probability
    explicitly; all are unobservable in practice, so experiments tune a
    constant multiplier instead and this serves as a diagnostic.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    d = state.d
    sign, logdet = np.linalg.slogdet(state.info_matrix)
    if sign <= 0:
        raise NumericError("information matrix is not positive definite")
    log_ratio = logdet - (2.0 * np.log(delta) + d * np.log(state.lam))
    return (2.0 * k_mu / c_mu) * (
        np.sqrt(max(r_noise**2 * log_ratio, 0.0)) + np.sqrt(state.lam) * q_norm
    )


def save_checkpoint(state: RankerState, path: str | Path, include_pairs: bool = True) -> None:
    """Write a versioned checkpoint (theta, info matrix, lam, round, q_norm).

    The pair buffer is included by default so a resumed run can keep
    re-fitting the full history.
    """
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "theta": state.theta,
        "info_matrix": state.info_matrix,
        "lam": np.array(state.lam),
        "round": np.array(state.round),
        "q_norm": np.array(state.q_norm),
    }
    if include_pairs:
        arrays["pairs_x"] = state.pairs.x
        arrays["pairs_y"] = state.pairs.y
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> RankerState:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        theta = data["theta"]
        state = RankerState(
            theta=theta,
            info_matrix=data["info_matrix"],
            lam=float(data["lam"]),
            round=int(data["round"]),
            q_norm=float(data["q_norm"]),
            pairs=_PairBuffer(len(theta)),
        )
        if "pairs_x" in data:
            state.pairs.extend(data["pairs_x"], data["pairs_y"])
    return state
