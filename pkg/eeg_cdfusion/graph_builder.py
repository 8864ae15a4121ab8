"""
    Channel graphs for the spatial encoder.

    Every EEG channel is a node. Edges come from a k-nearest-neighbour search
    over the per-channel DE vectors (Euclidean distance, ties broken by the
    lower node index) and are symmetrized by union. The degree matrix D and
    the Laplacian L = D - A are exposed next to A.

    ##########################################################################
    This code is part of the eeg_cdfusion package.

    This program is free software: you can redistribute it and/or modify
    it under the terms of the GNU Affero General Public License as published
    by the Free Software Foundation, either version 3 of the License, or
    (at your option) any later version.

    This program is distributed in the hope that it will be useful,
    but WITHOUT ANY WARRANTY; without even the implied warranty of
    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
    GNU Affero General Public License for more details.

    You should have received a copy of the GNU Affero General Public License
    along with this program.  If not, see <https://www.gnu.org/licenses/>.
    ##########################################################################
"""

from dataclasses import dataclass

import numpy as np

from eeg_cdfusion.exceptions import ConfigurationError, ValidationError

DEFAULT_K = 5


@dataclass
class ChannelGraph:
    """KNN graph over EEG channels.

    Attributes:
        adjacency (np.ndarray): [C, C] symmetric 0/1 matrix, zero diagonal.
        degree (np.ndarray): [C, C] diagonal matrix of node degrees.
        laplacian (np.ndarray): [C, C] L = D - A.
        node_features (np.ndarray): [C, F] features the graph was built from.
    """

    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    node_features: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def with_self_loops(self) -> np.ndarray:
        """A + I, the neighbourhood N_i plus i used by the graph encoders."""
        return self.adjacency + np.eye(self.n_nodes, dtype=self.adjacency.dtype)


def _validate_k(k: int, n_nodes: int) -> None:
    if not 1 <= k <= n_nodes - 1:
        raise ConfigurationError(f"k = {k} must lie in [1, {n_nodes - 1}] for {n_nodes} channels.")


def batch_adjacency(features: np.ndarray, k: int) -> np.ndarray:
    """KNN adjacency for a stack of samples.

    Args:
        features (np.ndarray): [S, C, F] node features per sample.
        k (int): Neighbours per node, 1 <= k <= C - 1.

    Raises:
        ConfigurationError: If k is out of range.
        ValidationError: If features contain NaN or Inf.

    Returns:
        adjacency (np.ndarray): [S, C, C] int64 0/1 matrices, symmetric with a
            zero diagonal. (i, j) is set when j is among the k nearest of i
            or i among the k nearest of j.
    """
    n_samples, n_nodes, _ = features.shape
    _validate_k(k, n_nodes)
    if not np.all(np.isfinite(features)):
        raise ValidationError("Graph node features contain NaN or Inf.")

    diff = features[:, :, None, :] - features[:, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist[:, np.arange(n_nodes), np.arange(n_nodes)] = np.inf
    # stable sort keeps the lower index first among equal distances
    nearest = np.argsort(dist, axis=-1, kind="stable")[..., :k]

    directed = np.zeros((n_samples, n_nodes, n_nodes), dtype=np.int64)
    np.put_along_axis(directed, nearest, 1, axis=-1)
    return directed | np.swapaxes(directed, -1, -2)


def knn_adjacency(features: np.ndarray, k: int) -> np.ndarray:
    """KNN adjacency [C, C] of a single [C, F] feature matrix."""
    return batch_adjacency(np.asarray(features)[None], k)[0]


def build_graph(features: np.ndarray, k: int = DEFAULT_K) -> ChannelGraph:
    """Assemble A, D and L = D - A for one sample.

    Args:
        features (np.ndarray): [C, F] node features (DE vectors per channel).
        k (int): Neighbours per node. Defaults to 5.

    Returns:
        graph (ChannelGraph): The graph with features attached.
    """
    adjacency = knn_adjacency(features, k)
    degree = np.diag(adjacency.sum(axis=1))
    return ChannelGraph(
        adjacency=adjacency,
        degree=degree,
        laplacian=degree - adjacency,
        node_features=np.asarray(features),
    )


def graph_from_adjacency(adjacency: np.ndarray, features: np.ndarray) -> ChannelGraph:
    """ChannelGraph around a given symmetric 0/1 adjacency (zero diagonal)."""
    adjacency = np.asarray(adjacency, dtype=np.int64)
    if not np.array_equal(adjacency, adjacency.T) or np.any(np.diag(adjacency)):
        raise ValidationError("Adjacency must be symmetric with a zero diagonal.")
    degree = np.diag(adjacency.sum(axis=1))
    return ChannelGraph(adjacency, degree, degree - adjacency, np.asarray(features))


def format_adjacency(graph: ChannelGraph) -> str:
    """Text dump of A, one row per line."""
    return "\n".join(" ".join(str(int(v)) for v in row) for row in graph.adjacency) + "\n"
