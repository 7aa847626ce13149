"""scikit-learn style front end: fit an MIS to an adjacency matrix."""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .async_engine import TimingParams, run_async
from .network import Network
from .protocol import IN, UN, ConfigError, ProtocolVariant
from .sync_engine import run_sync


def check_adjacency(X):
    """Validate a square, symmetric, loop-free adjacency matrix; return it as CSR."""
    X = check_array(X, accept_sparse="csr", dtype=None, ensure_min_samples=1, ensure_min_features=1)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"adjacency matrix must be square, got shape {X.shape}")
    A = sp.csr_matrix(X != 0, dtype=np.int8)
    if A.diagonal().any():
        raise ValueError("adjacency matrix has self-loops on its diagonal")
    if (A != A.T).nnz:
        raise ValueError("adjacency matrix must be symmetric")
    return A


def network_from_adjacency(A):
    coo = sp.triu(A, k=1).tocoo()
    return Network(range(A.shape[0]), zip(coo.row.tolist(), coo.col.tolist()))


def check_timing(timing):
    if isinstance(timing, TimingParams):
        return timing
    try:
        t_min, t_max, delta_max = (int(x) for x in timing)
    except (TypeError, ValueError):
        raise ConfigError(f"timing must be (t_min, t_max, delta_max), got {timing!r}") from None
    return TimingParams(t_min, t_max, delta_max)


class SingingMIS(ClusterMixin, BaseEstimator):
    """Compute a maximal independent set by running the singing protocol.

    Parameters
    ----------
    variant : {"singing", "sj"}
        Protocol variant; ``"sj"`` is the self-jamming protocol.
    engine : {"sync", "async"}
        Lock-step rounds or asynchronous rounds with delays.
    timing : (t_min, t_max, delta_max)
        Tick parameters of the asynchronous engine.
    max_rounds : int or None
        Round budget (the asynchronous horizon is ``max_rounds * t_max``).
    p : float
        Bias of the coin behind the ell values.
    random_state : int or None
        Seed of the run.

    Attributes
    ----------
    labels_ : ndarray of shape (n_agents,)
        1 for members of the independent set, 0 otherwise.
    mis_ : ndarray
        Indices of the members.
    states_ : ndarray
        Final protocol state per agent (0 = Out, 1 = In, 2 = Un).
    converged_ : bool
    n_rounds_ : int
        Rounds (sync) or ticks (async) until convergence or the budget.
    """

    def __init__(self, variant="singing", engine="sync", timing=(4, 8, 2), max_rounds=None, p=0.5,
                 random_state=None):
        self.variant = variant
        self.engine = engine
        self.timing = timing
        self.max_rounds = max_rounds
        self.p = p
        self.random_state = random_state

    def fit(self, X, y=None):
        A = check_adjacency(X)
        variant = ProtocolVariant(self.variant)
        if self.engine not in ("sync", "async"):
            raise ConfigError(f"engine must be 'sync' or 'async', got {self.engine!r}")
        seed = 0 if self.random_state is None else int(self.random_state)
        net = network_from_adjacency(A)
        init = {u: UN for u in net.agents}
        if self.engine == "sync":
            trace = run_sync(net, init, variant=variant, seed=seed, max_rounds=self.max_rounds, p=self.p)
            final = np.array([trace.final_states[u] for u in range(A.shape[0])], dtype=np.int8)
            self.converged_ = trace.termination == "converged"
            self.n_rounds_ = len(trace.rounds)
        else:
            params = check_timing(self.timing)
            horizon = None if self.max_rounds is None else self.max_rounds * params.t_max
            trace = run_async(net, init, params, variant=variant, seed=seed, horizon=horizon, p=self.p)
            final = trace.states_at(trace.end_tick)[0]
            self.converged_ = bool(trace.converged_tick[0] >= 0)
            self.n_rounds_ = int(trace.end_tick)
        self.states_ = final
        self.labels_ = (final == IN).astype(np.int64)
        self.mis_ = np.flatnonzero(self.labels_)
        self.n_agents_ = A.shape[0]
        return self

    def predict(self, X=None):
        """Labels of the fitted network; ``X`` must be the matrix it was fitted on."""
        check_is_fitted(self, "labels_")
        if X is not None and check_adjacency(X).shape[0] != self.n_agents_:
            raise ValueError("predict only applies to the fitted network")
        return self.labels_
