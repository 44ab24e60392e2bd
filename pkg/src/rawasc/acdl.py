"""Automatic compact dictionary learning (ACDL).

Jointly fits a dictionary ``A`` and a linear classifier ``W`` on simplex
codes ``Z``::

    min ||Y - A Z||_F^2 + gamma ||G - W Z||_F^2 + lam ||Z||_1
    s.t. Z >= 0, columns of Z sum to one

by alternating minimization, while pruning atoms that sit close to another
atom of the same class and carry less class information (higher entropy of
their classifier weights). The number of surviving atoms is the selected
dimensionality of the layer.

On the simplex ``||Z||_1`` equals the number of columns, so the sparsity term
is reported but never optimized.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .embed import LayerDataset
from .errors import DimensionError, NumericError, ParameterError

log = logging.getLogger(__name__)

A_RIDGE = 1e-8
W_RIDGE = 1e-3
DIVERGENCE_RUN = 5
DIVERGENCE_GROWTH = 1.10
TRIALS_PER_CLASS = 4
TRIAL_ITER_FRACTION = 0.25
SETTLE = 1e-3


@dataclass(frozen=True)
class AcdlConfig:
    gamma: float = 1.0
    lam: float = 0.1
    tau: float = 0.5
    stop_recon_error: float = 0.01
    max_outer_iters: int = 200
    initial_atoms_per_class: int = 16
    seed: int = 0
    normalize_columns: bool = True
    inner_iters: int = 100
    prune_tolerance: float = 0.2

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ParameterError("gamma and lambda must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ParameterError(f"tau={self.tau} outside [0, 1]")
        # 0 disables the error criterion (run to max_outer_iters)
        if self.stop_recon_error < 0:
            raise ParameterError("stop_recon_error must be non-negative")
        if self.max_outer_iters < 1 or self.initial_atoms_per_class < 1 or self.inner_iters < 1:
            raise ParameterError("iteration and atom counts must be >= 1")


@dataclass
class CompactDictionary:
    A: np.ndarray
    W: np.ndarray
    alive: np.ndarray
    atom_class: np.ndarray
    G: np.ndarray
    Z: np.ndarray

    @property
    def n_alive(self):
        return int(self.alive.sum())

    def copy(self):
        return CompactDictionary(self.A.copy(), self.W.copy(), self.alive.copy(),
                                 self.atom_class.copy(), self.G, self.Z.copy())

    def kill(self, mask):
        """Apply a new liveness mask, zeroing dead atoms everywhere."""
        dead = ~mask
        self.alive = mask.copy()
        self.A[:, dead] = 0.0
        self.W[:, dead] = 0.0
        self.Z[dead] = 0.0


@dataclass
class AcdlResult:
    dictionary: CompactDictionary
    d_selected: int
    recon_error_trace: list
    alive_trace: list
    classification_trace: list
    objective_trace: list
    iterations: int
    converged: bool
    pruning_iters: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# simplex

def simplex_project(v):
    """Euclidean projection onto ``{z >= 0, sum(z) = 1}``.

    A 2-D input is projected column by column.
    """
    V = np.asarray(v, dtype=np.float64)
    if V.size == 0:
        raise DimensionError("cannot project an empty vector")
    vector = V.ndim == 1
    if vector:
        V = V[:, None]
    k = V.shape[0]
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ind = np.arange(1, k + 1)[:, None]
    rho = np.count_nonzero(U - css / ind > 0, axis=0)
    theta = css[rho - 1, np.arange(V.shape[1])] / rho
    Z = np.maximum(V - theta, 0.0)
    # absorb roundoff so each column sums to 1 to machine precision
    Z /= Z.sum(axis=0)
    return Z[:, 0] if vector else Z


def code_objective(A, W, G, Y, Z, gamma):
    """Per-column ``||y - Az||^2 + gamma ||g - Wz||^2``."""
    r = Y - A @ Z
    out = np.einsum("ij,ij->j", r, r)
    if gamma:
        c = G - W @ Z
        out = out + gamma * np.einsum("ij,ij->j", c, c)
    return out


def sparse_code(A, W, g, y, gamma=1.0, n_iter=100, z0=None, tol=1e-12, return_trace=False):
    """Simplex-constrained codes by projected gradient descent.

    ``y`` and ``g`` may be single columns or matrices with one column per
    sample. With step ``1/L`` (``L`` the gradient's Lipschitz constant) the
    per-column objective never increases.
    """
    A = np.asarray(A, dtype=np.float64)
    Y = np.asarray(y, dtype=np.float64)
    vector = Y.ndim == 1
    Y = Y[:, None] if vector else Y
    G = np.asarray(g, dtype=np.float64)
    G = G.reshape(-1, 1) if G.ndim == 1 else G
    W = np.asarray(W, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] == 0:
        raise DimensionError("need at least one atom")
    if A.shape[0] != Y.shape[0]:
        raise DimensionError(f"atoms have {A.shape[0]} rows, data has {Y.shape[0]}")
    for name, arr in (("A", A), ("W", W), ("y", Y), ("g", G)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite entries in {name}")

    k = A.shape[1]
    m = Y.shape[1]
    if z0 is None:
        Z = np.full((k, m), 1.0 / k)
    else:
        Z = simplex_project(np.asarray(z0, dtype=np.float64).reshape(k, m))
    trace = [code_objective(A, W, G, Y, Z, gamma)] if return_trace else None
    if k > 1:
        H = A.T @ A
        b = A.T @ Y
        if gamma:
            H = H + gamma * (W.T @ W)
            b = b + gamma * (W.T @ G)
        L = 2.0 * np.linalg.eigvalsh(H)[-1]
        if L > 0:
            step = 1.0 / L
            for _ in range(n_iter):
                Z_new = simplex_project(Z - step * 2.0 * (H @ Z - b))
                delta = np.max(np.abs(Z_new - Z))
                Z = Z_new
                if return_trace:
                    trace.append(code_objective(A, W, G, Y, Z, gamma))
                if delta <= tol:
                    break
    Z = Z[:, 0] if vector else Z
    if return_trace:
        return Z, np.array(trace)
    return Z


# ---------------------------------------------------------------------------
# atom elimination

def entropy_score(W):
    """``sum w ln w`` of each softmax-normalized absolute weight column."""
    a = np.abs(np.asarray(W, dtype=np.float64))
    a = a - a.max(axis=0, keepdims=True)
    p = np.exp(a)
    p /= p.sum(axis=0, keepdims=True)
    return np.sum(p * np.log(p), axis=0)


def eliminate_atoms(dictionary: CompactDictionary, tau) -> np.ndarray:
    """Return the liveness mask after one pruning sweep.

    Each alive atom is paired with its nearest alive atom of the same class;
    the pair is redundant when that distance is below ``tau`` times the
    diameter of all alive atoms. The member with the smaller ``w ln w`` score
    (the less discriminative one) dies, the higher index on ties. Pairs are
    resolved closest first, and a pair whose survivor already died is skipped,
    so no class is ever emptied.
    """
    alive = dictionary.alive.copy()
    for candidates in candidate_pairs(dictionary, tau).values():
        for loser, survivor in candidates:
            if alive[loser] and alive[survivor]:
                alive[loser] = False
    return alive


def candidate_pairs(dictionary: CompactDictionary, tau):
    """Redundant ``(loser, survivor)`` pairs per class, closest first."""
    idx = np.flatnonzero(dictionary.alive)
    if idx.size < 2:
        return {}
    cls = dictionary.atom_class
    score = entropy_score(dictionary.W)
    atoms = dictionary.A[:, idx]
    sq = np.sum(atoms ** 2, axis=0)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * atoms.T @ atoms, 0.0))
    diameter = D.max()

    out = {}
    for c in np.unique(cls[idx]):
        sel = np.flatnonzero(cls[idx] == c)
        if sel.size < 2:
            continue
        members = idx[sel]
        if diameter == 0.0:
            # all atoms coincide: keep the most discriminative one per class
            keep = members[np.argmax(score[members])]
            out[int(c)] = [(int(j), int(keep)) for j in members if j != keep]
            continue
        sub = D[np.ix_(sel, sel)]
        sub[np.diag_indices_from(sub)] = np.inf
        nearest = np.argmin(sub, axis=1)
        ratio = sub[np.arange(sel.size), nearest] / diameter
        seen, pairs = set(), []
        for a in np.argsort(ratio, kind="stable"):
            if ratio[a] >= tau:
                break
            j, k = int(members[a]), int(members[nearest[a]])
            if (min(j, k), max(j, k)) in seen:
                continue
            seen.add((min(j, k), max(j, k)))
            if score[j] < score[k] or (score[j] == score[k] and j > k):
                pairs.append((j, k))
            else:
                pairs.append((k, j))
        if pairs:
            out[int(c)] = pairs
    return out


# ---------------------------------------------------------------------------
# fitting

def kmeanspp_columns(X, k, rng):
    """Indices of ``k`` columns of ``X`` chosen by k-means++ seeding."""
    m = X.shape[1]
    k = min(k, m)
    chosen = [int(rng.integers(m))]
    d2 = np.sum((X - X[:, chosen[0]][:, None]) ** 2, axis=0)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(m), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[:, nxt][:, None]) ** 2, axis=0))
    return chosen


def _ridge(T, Z, reg):
    """Solve ``min ||T - B Z||^2 + reg ||B||^2`` for ``B``."""
    k = Z.shape[0]
    return np.linalg.solve(Z @ Z.T + reg * np.eye(k), Z @ T.T).T


def one_hot(labels, n_classes):
    G = np.zeros((n_classes, labels.size))
    G[labels, np.arange(labels.size)] = 1.0
    return G


def prepare_columns(Y, normalize=True):
    Y = np.asarray(Y, dtype=np.float64)
    if not normalize:
        return Y
    norms = np.linalg.norm(Y, axis=0)
    norms[norms == 0] = 1.0
    return Y / norms


def _check_codes(Z, alive):
    if Z[alive].min(initial=0.0) < -1e-12 or np.any(np.abs(Z[alive].sum(axis=0) - 1.0) > 1e-9):
        raise NumericError("codes left the simplex")


def acdl_fit(y, config: AcdlConfig = AcdlConfig(), n_classes=None) -> AcdlResult:
    """Fit a compact dictionary to a layer dataset and report its size."""
    if not isinstance(y, LayerDataset):
        y = LayerDataset(*y)
    labels = y.labels
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    if y.n_samples < C:
        raise ParameterError(f"{y.n_samples} samples for {C} classes")
    Y = prepare_columns(y.Y, config.normalize_columns)
    if not np.all(np.isfinite(Y)):
        raise NumericError(f"layer {y.layer}: non-finite data")
    y_norm = np.linalg.norm(Y)
    if y_norm == 0:
        raise NumericError(f"layer {y.layer}: data matrix is zero")
    G = one_hot(labels, C)
    rng = np.random.default_rng(config.seed)

    atoms, atom_class = [], []
    for c in range(C):
        cols = np.flatnonzero(labels == c)
        if cols.size == 0:
            continue
        for i in kmeanspp_columns(Y[:, cols], config.initial_atoms_per_class, rng):
            atoms.append(Y[:, cols[i]])
            atom_class.append(c)
    A = np.stack(atoms, axis=1)
    K = A.shape[1]
    Z = sparse_code(A, np.zeros((C, K)), G, Y, gamma=0.0, n_iter=config.inner_iters)
    W = _ridge(G, Z, W_RIDGE)
    d = CompactDictionary(A, W, np.ones(K, dtype=bool), np.array(atom_class), G, Z)

    recon, alive_counts, cls_loss, objective, pruned = [], [], [], [], []
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        idx = np.flatnonzero(d.alive)
        Za = sparse_code(d.A[:, idx], d.W[:, idx], G, Y, config.gamma,
                         n_iter=config.inner_iters, z0=d.Z[idx])
        d.Z[idx] = Za
        d.A[:, idx] = _ridge(Y, Za, A_RIDGE)
        d.W[:, idx] = _ridge(G, Za, W_RIDGE)
        _check_codes(d.Z, d.alive)

        rec = np.linalg.norm(Y - d.A[:, idx] @ Za)
        cls = float(np.sum((G - d.W[:, idx] @ Za) ** 2))
        recon.append(float(rec / y_norm))
        alive_counts.append(idx.size)
        cls_loss.append(cls)
        objective.append(float(rec ** 2 + config.gamma * cls + config.lam * Za.sum()))

        # Elimination is gated: once the target is met, the redundant pair
        # whose loser costs least is removed, provided one full update
        # without it stays under the target and within a bounded jump.
        candidates = candidate_pairs(d, config.tau)
        if recon[-1] <= config.stop_recon_error:
            limit = min(config.stop_recon_error * y_norm, (1.0 + config.prune_tolerance) * rec)
            best = None
            for pairs in candidates.values():
                for pair in pairs[:TRIALS_PER_CLASS]:
                    trial = _update_without(d, Y, G, pair, config)
                    if trial[0] <= limit and (best is None or trial[0] < best[0]):
                        best = trial
            if best is None:
                settled = len(recon) > 1 and recon[-2] - recon[-1] <= SETTLE * recon[-2]
                if settled:
                    candidates = {}
            else:
                d = best[1]
                pruned.append(it)
        if recon[-1] <= config.stop_recon_error and not candidates:
            converged = True
            break
        if _diverging(recon, pruned):
            log.warning("layer %s: reconstruction error grew for %d iterations, stopping",
                        y.layer, DIVERGENCE_RUN)
            break

    if not converged:
        log.info("layer %s: ACDL stopped after %d iterations at relative error %.4g",
                 y.layer, it, recon[-1])
    return AcdlResult(d, d.n_alive, recon, alive_counts, cls_loss, objective, it, converged, pruned)


def _update_without(d, Y, G, pair, config):
    """One outer update with ``pair[0]`` removed; returns (error norm, dictionary)."""
    loser, survivor = pair
    t = d.copy()
    t.Z[survivor] += t.Z[loser]
    mask = t.alive.copy()
    mask[loser] = False
    t.kill(mask)
    idx = np.flatnonzero(t.alive)
    Za = sparse_code(t.A[:, idx], t.W[:, idx], G, Y, config.gamma,
                     n_iter=max(1, int(config.inner_iters * TRIAL_ITER_FRACTION)), z0=t.Z[idx])
    t.Z[idx] = Za
    t.A[:, idx] = _ridge(Y, Za, A_RIDGE)
    t.W[:, idx] = _ridge(G, Za, W_RIDGE)
    return np.linalg.norm(Y - t.A[:, idx] @ Za), t


def _diverging(trace, pruned):
    """Error grew by >10% for several consecutive iterations not explained by pruning."""
    if len(trace) <= DIVERGENCE_RUN:
        return False
    n = len(trace)
    steps = range(n - DIVERGENCE_RUN, n)
    return all(trace[t] > trace[t - 1] * DIVERGENCE_GROWTH and t not in pruned for t in steps)


@dataclass
class LayerSelection:
    layer: str
    n_features: int
    d: int
    result: AcdlResult = None
    error: Exception = None

    @property
    def compression_ratio(self):
        return 1.0 - self.d / self.n_features


def select_layer_dims(datasets, configs, n_classes=None):
    """Run ACDL on every layer; ``configs`` is one AcdlConfig or a per-layer dict.

    A failing layer is reported with ``d = n_features`` and its exception,
    without stopping the others.
    """
    out = {}
    for layer, ds in datasets.items():
        cfg = configs.get(layer, AcdlConfig()) if isinstance(configs, dict) else configs
        try:
            res = acdl_fit(ds, cfg, n_classes)
        except (NumericError, ParameterError, DimensionError, np.linalg.LinAlgError) as exc:
            log.error("layer %s: ACDL failed: %s", layer, exc)
            out[layer] = LayerSelection(layer, ds.n_features, ds.n_features, None, exc)
            continue
        if not res.converged:
            log.warning("layer %s: ACDL did not reach the stopping criterion", layer)
        out[layer] = LayerSelection(layer, ds.n_features, res.d_selected, res)
    return out


def write_trace_csv(path, result: AcdlResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "alive_atoms", "relative_recon_error", "classification_loss"])
        for i, (a, r, c) in enumerate(zip(result.alive_trace, result.recon_error_trace,
                                          result.classification_trace), start=1):
            w.writerow([i, a, repr(r), repr(c)])
