"""
Impact Entropy Analyzer

Maps response matrices to probability matrices through the fitted stable law,
computes row/column entropies and the entropy of impacts
I_ij = sqrt(H(u_i) H(v_j)), and thresholds I into directed impact networks
(edge j -> i when stock j impacts stock i).
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from networkx.drawing.nx_pydot import write_dot
from scipy import special

from errors import DimensionError, NumericError, PreconditionError
from stable_utils import StableParams, stable_cdf

logger = logging.getLogger(__name__)

DEFAULT_BINS = 50
DEFAULT_LO_FRAC = 0.6
DEFAULT_HI_FRAC = 0.75
REFERENCE_FRACTION = 0.75


def shannon_entropy(probabilities: np.ndarray) -> float:
    """Entropy in nats; zero probabilities contribute nothing."""
    return float(np.sum(special.entr(np.asarray(probabilities, dtype=float))))


def spectrum_entropy(values: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """
    Entropy of the empirical distribution of a spectrum over equal-width bins.

    Args:
        values (np.ndarray): At least two values
        bins (int): Bin count over [min, max]

    Returns:
        float: Entropy in nats
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise PreconditionError("spectrum entropy needs at least 2 values")
    counts, _ = np.histogram(values, bins=bins)
    return shannon_entropy(counts / counts.sum())


# ----------------------
# Probability mapping
# ----------------------
def response_bin_edges(values: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """K equal-width bins spanning [min, max] of the pooled responses."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if bins < 2:
        raise PreconditionError(f"bin count must be at least 2, got {bins}")
    if values.size == 0 or values.min() == values.max():
        raise PreconditionError("responses span no range; bin edges undefined")
    return np.linspace(values.min(), values.max(), bins + 1)


def _check_edges(edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise PreconditionError("bin edges must be strictly increasing")
    return edges


def _cdf(distribution, x: np.ndarray) -> np.ndarray:
    if isinstance(distribution, StableParams):
        return np.asarray(stable_cdf(x, distribution), dtype=float)
    return np.asarray(distribution.cdf(x), dtype=float)


def bin_masses(distribution, edges: np.ndarray) -> np.ndarray:
    """
    Probability mass of each bin under the fitted law.

    The two outermost bins are open towards -inf and +inf, so the masses sum to 1.
    `distribution` is a StableParams or any object with a `cdf` method.
    """
    edges = _check_edges(edges)
    interior = _cdf(distribution, edges[1:-1]) if len(edges) > 2 else np.empty(0)
    cumulative = np.concatenate([[0.0], np.maximum.accumulate(interior), [1.0]])
    return np.diff(cumulative)


def bin_indices(values: np.ndarray, edges: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Containing bin of each value; the last bin is closed on the right.

    Returns:
        Tuple[np.ndarray, int]: (bin index per value, number of out-of-range values clamped)
    """
    edges = _check_edges(edges)
    values = np.asarray(values, dtype=float)
    k = len(edges) - 1
    index = np.searchsorted(edges, values, side="right") - 1
    index = np.where(values == edges[-1], k - 1, index)
    outside = (values < edges[0]) | (values > edges[-1])
    return np.clip(index, 0, k - 1), int(outside.sum())


def bin_probability(r: float, distribution, edges: np.ndarray) -> float:
    """P_0(r): mass of the bin containing r (clamped to the boundary bins when outside)."""
    index, clamped = bin_indices(np.array([r]), edges)
    if clamped:
        logger.warning("Response %.6g outside [%.6g, %.6g]; clamped", r, edges[0], edges[-1])
    return float(bin_masses(distribution, edges)[index[0]])


def normalize_off_diagonal(raw: np.ndarray) -> np.ndarray:
    """P = P_0 / sum of off-diagonal P_0, with the diagonal set to 1."""
    raw = np.asarray(raw, dtype=float)
    off = ~np.eye(raw.shape[0], dtype=bool)
    total = raw[off].sum()
    if not total > 0:
        raise NumericError("off-diagonal probability mass is zero")
    result = raw / total
    result[~off] = 1.0
    return result


@dataclass
class ProbabilityMatrix:
    """Normalized bin probabilities P(R_ij) with the raw masses P_0 and bin edges."""

    values: np.ndarray
    raw: np.ndarray
    edges: np.ndarray
    clamped: int = 0
    symbols: List[str] = field(default_factory=list)

    @property
    def bins(self) -> int:
        return len(self.edges) - 1


def probability_matrix(
    responses: np.ndarray,
    distribution,
    bins: int = DEFAULT_BINS,
    edges: Optional[np.ndarray] = None,
    symbols: Optional[Sequence[str]] = None,
) -> ProbabilityMatrix:
    """
    Map a response matrix to a probability matrix.

    Args:
        responses (np.ndarray): N x N responses, NaN where missing
        distribution: Fitted law of the same case (StableParams or frozen scipy law)
        bins (int): K, used when edges are not given
        edges (np.ndarray, optional): Explicit bin edges
        symbols (Sequence[str], optional): Row/column labels

    Returns:
        ProbabilityMatrix: Off-diagonal entries sum to 1, diagonal entries are 1
    """
    r = np.asarray(responses, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {r.shape}")
    off = ~np.eye(r.shape[0], dtype=bool)
    defined = off & ~np.isnan(r)
    if not defined.any():
        raise PreconditionError("every off-diagonal response is missing")

    edges = response_bin_edges(r[defined], bins) if edges is None else _check_edges(edges)
    masses = bin_masses(distribution, edges)
    index, clamped = bin_indices(r[defined], edges)
    if clamped:
        logger.warning("%d responses outside the bin range were clamped", clamped)

    raw = np.zeros_like(r)
    raw[defined] = masses[index]
    return ProbabilityMatrix(
        values=normalize_off_diagonal(raw),
        raw=raw,
        edges=edges,
        clamped=clamped,
        symbols=list(symbols) if symbols is not None else [],
    )


def row_col_entropies(p: Union[ProbabilityMatrix, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """H(u_i) = -sum_j P_ij ln P_ij over rows and H(v_j) over columns; P_ii = 1 adds 0."""
    values = p.values if isinstance(p, ProbabilityMatrix) else np.asarray(p, dtype=float)
    terms = special.entr(values)
    return terms.sum(axis=1), terms.sum(axis=0)


@dataclass
class EntropyMatrix:
    hu: np.ndarray
    hv: np.ndarray
    values: np.ndarray
    symbols: List[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.hu)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()


def impact_entropy_matrix(
    hu: np.ndarray, hv: np.ndarray, symbols: Optional[Sequence[str]] = None
) -> EntropyMatrix:
    """I_ij = sqrt(H(u_i) H(v_j)), diagonal included."""
    hu = np.asarray(hu, dtype=float)
    hv = np.asarray(hv, dtype=float)
    if hu.shape != hv.shape or hu.ndim != 1:
        raise DimensionError(f"entropy vectors must have equal length, got {hu.shape} and {hv.shape}")
    if np.any(hu < 0) or np.any(hv < 0):
        raise PreconditionError("entropies must be non-negative")
    return EntropyMatrix(
        hu=hu,
        hv=hv,
        values=np.sqrt(np.outer(hu, hv)),
        symbols=list(symbols) if symbols is not None else [f"S{k + 1}" for k in range(len(hu))],
    )


# ----------------------
# Impact networks
# ----------------------
@dataclass
class ImpactNetwork:
    """Directed graph of impacts j -> i with weight I_ij."""

    graph: nx.DiGraph
    lower: float
    upper: float
    group: Optional[int] = None

    @property
    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def in_degree(self) -> Dict[str, int]:
        return dict(self.graph.in_degree())

    def out_degree(self) -> Dict[str, int]:
        return dict(self.graph.out_degree())

    def signed_connectivity(self) -> Dict[str, int]:
        return {node: data["signed_connectivity"] for node, data in self.graph.nodes(data=True)}

    def edge_frame(self) -> pd.DataFrame:
        rows = [
            {"src": src, "dst": dst, "I_ij": data["weight"], "group": "" if self.group is None else self.group}
            for src, dst, data in self.graph.edges(data=True)
        ]
        return pd.DataFrame(rows, columns=["src", "dst", "I_ij", "group"])


def signed_connectivity(in_degree: int, out_degree: int) -> int:
    """In-degree when a node receives more edges, minus out-degree when it emits more, 0 on a tie."""
    if in_degree > out_degree:
        return in_degree
    if out_degree > in_degree:
        return -out_degree
    return 0


def _build_graph(
    entropy: EntropyMatrix,
    mask: np.ndarray,
    node_attributes: Optional[Dict[str, Dict]] = None,
) -> nx.DiGraph:
    graph = nx.DiGraph()
    for symbol in entropy.symbols:
        graph.add_node(symbol, **(node_attributes or {}).get(symbol, {}))
    for i, j in zip(*np.nonzero(mask)):
        graph.add_edge(entropy.symbols[j], entropy.symbols[i], weight=float(entropy.values[i, j]))
    for node in graph.nodes:
        in_deg, out_deg = graph.in_degree(node), graph.out_degree(node)
        graph.nodes[node]["in_degree"] = in_deg
        graph.nodes[node]["out_degree"] = out_deg
        graph.nodes[node]["signed_connectivity"] = signed_connectivity(in_deg, out_deg)
    return graph


def mean_entropy(entropy: EntropyMatrix, include_diagonal: bool = False) -> float:
    if include_diagonal:
        return float(np.mean(entropy.values))
    off = ~np.eye(entropy.n, dtype=bool)
    return float(np.mean(entropy.values[off]))


def threshold_network(
    entropy: EntropyMatrix,
    lo_frac: float = DEFAULT_LO_FRAC,
    hi_frac: float = DEFAULT_HI_FRAC,
    include_diagonal_mean: bool = False,
    node_attributes: Optional[Dict[str, Dict]] = None,
) -> ImpactNetwork:
    """
    Network of the off-diagonal cells with lo_frac <I> < I_ij <= hi_frac <I>.

    Args:
        entropy (EntropyMatrix): Entropy of impacts
        lo_frac, hi_frac (float): Range as fractions of the mean entropy
        include_diagonal_mean (bool): Average over all entries instead of off-diagonal ones
        node_attributes (Dict, optional): Extra attributes per symbol

    Returns:
        ImpactNetwork: Edges j -> i; no self-loops
    """
    if not 0 <= lo_frac < hi_frac:
        raise PreconditionError(f"need 0 <= lo_frac < hi_frac, got {lo_frac}, {hi_frac}")
    mean = mean_entropy(entropy, include_diagonal_mean)
    lower, upper = lo_frac * mean, hi_frac * mean
    off = ~np.eye(entropy.n, dtype=bool)
    mask = off & (entropy.values > lower) & (entropy.values <= upper)
    return ImpactNetwork(graph=_build_graph(entropy, mask, node_attributes), lower=lower, upper=upper)


@dataclass
class GroupNetwork:
    """One rank group of entropy values: I^(q) and its network."""

    q: int
    values: np.ndarray
    network: ImpactNetwork

    @property
    def support(self) -> np.ndarray:
        return self.values > 0


def group_networks(
    entropy: EntropyMatrix, groups: int, node_attributes: Optional[Dict[str, Dict]] = None
) -> List[GroupNetwork]:
    """
    Rank the off-diagonal entropies ascending and split them into Q groups.

    Ties are ordered by (i, j). With Q not dividing N(N-1) the last group takes
    the remainder. I^(q) keeps the in-group entries and zeroes the rest.

    Raises:
        PreconditionError: If Q < 1 or Q > N(N-1)
    """
    n = entropy.n
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    values = entropy.values[rows, cols]
    total = len(values)
    if not 1 <= groups <= total:
        raise PreconditionError(f"group count must lie in [1, {total}], got {groups}")

    order = np.lexsort((cols, rows, values))
    size = total // groups
    result = []
    for q in range(groups):
        stop = (q + 1) * size if q < groups - 1 else total
        members = order[q * size:stop]
        mask = np.zeros((n, n), dtype=bool)
        mask[rows[members], cols[members]] = True
        group_values = np.where(mask, entropy.values, 0.0)
        graph = _build_graph(entropy, mask, node_attributes)
        bounds = values[members]
        network = ImpactNetwork(graph=graph, lower=float(bounds.min()), upper=float(bounds.max()), group=q + 1)
        result.append(GroupNetwork(q=q + 1, values=group_values, network=network))
    return result


def connectivity_by_group(groups: Sequence[GroupNetwork]) -> pd.DataFrame:
    """Long table (symbol, q, in_degree, out_degree, signed_connectivity) over all groups."""
    rows = []
    for group in groups:
        for node, data in group.network.graph.nodes(data=True):
            rows.append({
                "symbol": node,
                "q": group.q,
                "in_degree": data["in_degree"],
                "out_degree": data["out_degree"],
                "signed_connectivity": data["signed_connectivity"],
            })
    return pd.DataFrame(rows, columns=["symbol", "q", "in_degree", "out_degree", "signed_connectivity"])


def peak_connectivity(network: ImpactNetwork) -> int:
    """Largest in- or out-degree of any node."""
    degrees = list(network.in_degree().values()) + list(network.out_degree().values())
    return max(degrees, default=0)


def mean_incident_connectivity(network: ImpactNetwork) -> float:
    """Mean over edges of the average total degree of the two endpoints."""
    graph = network.graph
    if graph.number_of_edges() == 0:
        return 0.0
    degree = dict(graph.degree())
    return float(np.mean([(degree[u] + degree[v]) / 2 for u, v in graph.edges]))


@dataclass
class ScatterExport:
    frame: pd.DataFrame
    references: Dict[str, float]


def scatter_export(
    hu: np.ndarray,
    hv: np.ndarray,
    symbols: Sequence[str],
    avg_trades: Optional[Sequence[float]] = None,
) -> ScatterExport:
    """
    Per-stock entropy-plane table with mean and 0.75 x mean reference values.

    Returns:
        ScatterExport: Rows (symbol, h_u, h_v, i_ii, avg_trades) and the references
    """
    hu = np.asarray(hu, dtype=float)
    hv = np.asarray(hv, dtype=float)
    i_ii = np.sqrt(hu * hv)
    trades = np.asarray(avg_trades, dtype=float) if avg_trades is not None else np.full(len(hu), np.nan)
    frame = pd.DataFrame({"symbol": list(symbols), "h_u": hu, "h_v": hv, "i_ii": i_ii, "avg_trades": trades})
    references = {
        "mean_h_u": float(np.mean(hu)),
        "mean_h_v": float(np.mean(hv)),
        "mean_i_ii": float(np.mean(i_ii)),
    }
    references.update({
        f"{REFERENCE_FRACTION}_{key}": REFERENCE_FRACTION * value for key, value in list(references.items())
    })
    return ScatterExport(frame=frame, references=references)


def export_network(network: ImpactNetwork, base_path: str, gexf: bool = False) -> Dict[str, str]:
    """
    Write a network as DOT and edge-list CSV, plus GEXF on request.

    GEXF files carry a modification date, so they are left out of
    reproducible output trees by default.
    """
    os.makedirs(os.path.dirname(base_path) or ".", exist_ok=True)
    paths = {"dot": f"{base_path}.dot", "edges": f"{base_path}_edges.csv"}
    write_dot(network.graph, paths["dot"])
    network.edge_frame().to_csv(paths["edges"], index=False, float_format="%.17g", lineterminator="\n")
    if gexf:
        paths["gexf"] = f"{base_path}.gexf"
        nx.write_gexf(network.graph, paths["gexf"])
    return paths
