import os

import networkx as nx
import numpy as np
import pandas as pd
import pytest
from scipy import stats

from entropy_analyzer import (
    EntropyMatrix,
    bin_indices,
    bin_masses,
    bin_probability,
    connectivity_by_group,
    export_network,
    group_networks,
    impact_entropy_matrix,
    mean_incident_connectivity,
    normalize_off_diagonal,
    peak_connectivity,
    probability_matrix,
    row_col_entropies,
    scatter_export,
    shannon_entropy,
    signed_connectivity,
    spectrum_entropy,
    threshold_network,
)
from errors import DimensionError, NumericError, PreconditionError
from stable_utils import StableParams


def three_stock_entropy() -> EntropyMatrix:
    return impact_entropy_matrix(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))


class TestShannonEntropy:
    @pytest.mark.parametrize("k", [2, 10, 50])
    def test_uniform_distribution_gives_log_k(self, k):
        # Arrange, Act, Assert
        assert shannon_entropy(np.full(k, 1 / k)) == pytest.approx(np.log(k))

    def test_zero_probabilities_contribute_nothing(self):
        # Arrange, Act, Assert
        assert shannon_entropy(np.array([1.0, 0.0, 0.0])) == 0.0

    def test_evenly_spread_spectrum_fills_every_bin(self):
        # Arrange
        values = (np.arange(20) + 0.5) / 20

        # Act
        entropy = spectrum_entropy(values, bins=20)

        # Assert
        assert entropy == pytest.approx(np.log(20))

    def test_spectrum_entropy_needs_two_values(self):
        # Arrange, Act, Assert
        with pytest.raises(PreconditionError):
            spectrum_entropy(np.array([1.0]))


class TestBinning:
    def test_outer_bins_are_open(self):
        # Arrange
        edges = np.array([-1.0, 0.0, 1.0])

        # Act
        masses = bin_masses(stats.norm(), edges)

        # Assert
        np.testing.assert_allclose(masses, [0.5, 0.5])

    def test_masses_sum_to_one_under_stable_law(self):
        # Arrange
        edges = np.linspace(-3, 3, 13)

        # Act
        masses = bin_masses(StableParams(1.5, 0.3, 1.0, 0.0), edges)

        # Assert
        assert masses.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(masses >= 0)

    def test_bin_indices_close_last_bin_and_count_clamps(self):
        # Arrange
        edges = np.array([0.0, 1.0, 2.0])

        # Act
        index, clamped = bin_indices(np.array([-0.5, 0.0, 1.0, 2.0, 3.0]), edges)

        # Assert
        np.testing.assert_array_equal(index, [0, 0, 1, 1, 1])
        assert clamped == 2

    def test_decreasing_edges_raise(self):
        # Arrange, Act, Assert
        with pytest.raises(PreconditionError):
            bin_masses(stats.norm(), np.array([1.0, 0.0]))

    def test_bin_probability_of_single_response(self):
        # Arrange, Act
        value = bin_probability(0.5, stats.norm(), np.array([-1.0, 0.0, 1.0]))

        # Assert
        assert value == pytest.approx(0.5)


class TestProbabilityMatrix:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.responses = rng.normal(size=(6, 6))
        self.responses[1, 4] = np.nan

    def test_off_diagonal_sums_to_one_with_unit_diagonal(self):
        # Arrange, Act
        p = probability_matrix(self.responses, stats.norm(), bins=8)

        # Assert
        off = ~np.eye(6, dtype=bool)
        assert p.values[off].sum() == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_array_equal(np.diag(p.values), np.ones(6))
        assert p.values[1, 4] == 0.0
        assert p.bins == 8

    def test_explicit_edges_clamp_outliers(self):
        # Arrange
        edges = np.array([-0.5, 0.0, 0.5])

        # Act
        p = probability_matrix(self.responses, stats.norm(), edges=edges)

        # Assert
        assert p.clamped > 0
        assert np.all(p.raw[~np.eye(6, dtype=bool) & ~np.isnan(self.responses)] > 0)

    def test_all_missing_raises(self):
        # Arrange
        responses = np.full((3, 3), np.nan)

        # Act, Assert
        with pytest.raises(PreconditionError):
            probability_matrix(responses, stats.norm())

    def test_zero_mass_cannot_be_normalized(self):
        # Arrange, Act, Assert
        with pytest.raises(NumericError):
            normalize_off_diagonal(np.eye(3))

    def test_row_and_column_entropy_totals_agree(self):
        # Arrange
        p = probability_matrix(self.responses, stats.norm(), bins=8)

        # Act
        hu, hv = row_col_entropies(p)

        # Assert
        assert hu.sum() == pytest.approx(hv.sum(), abs=1e-12)
        assert np.all(hu >= 0)


class TestImpactEntropy:
    def test_squares_factorize(self):
        # Arrange
        hu = np.array([0.2, 0.5, 0.9])
        hv = np.array([0.4, 0.1, 0.7])

        # Act
        entropy = impact_entropy_matrix(hu, hv, ["A", "B", "C"])

        # Assert
        np.testing.assert_allclose(entropy.values ** 2, np.outer(hu, hv), rtol=1e-12)
        np.testing.assert_allclose(entropy.diagonal(), np.sqrt(hu * hv))

    def test_length_mismatch_raises(self):
        # Arrange, Act, Assert
        with pytest.raises(DimensionError):
            impact_entropy_matrix(np.ones(3), np.ones(2))

    def test_scatter_export_references(self):
        # Arrange
        hu, hv = np.array([1.0, 3.0]), np.array([4.0, 3.0])

        # Act
        export = scatter_export(hu, hv, ["A", "B"], avg_trades=[10.0, 20.0])

        # Assert
        assert list(export.frame.columns) == ["symbol", "h_u", "h_v", "i_ii", "avg_trades"]
        assert export.references["mean_i_ii"] == pytest.approx(2.5)
        assert export.references["0.75_mean_h_u"] == pytest.approx(1.5)


class TestThresholdNetwork:
    def test_edges_point_from_impacting_stock(self):
        # Arrange
        entropy = three_stock_entropy()

        # Act
        network = threshold_network(entropy, lo_frac=0.7, hi_frac=0.95)

        # Assert
        assert network.edge_count == 4
        assert network.graph.has_edge("S2", "S1")
        assert network.graph.has_edge("S1", "S3")
        assert not network.graph.has_edge("S3", "S2")
        assert nx.number_of_selfloops(network.graph) == 0

    def test_connectivity_metrics(self):
        # Arrange
        network = threshold_network(three_stock_entropy(), lo_frac=0.7, hi_frac=0.95)

        # Act, Assert
        assert peak_connectivity(network) == 2
        assert mean_incident_connectivity(network) == pytest.approx(3.0)
        assert network.signed_connectivity() == {"S1": 0, "S2": 0, "S3": 0}

    def test_invalid_range_raises(self):
        # Arrange, Act, Assert
        with pytest.raises(PreconditionError):
            threshold_network(three_stock_entropy(), lo_frac=0.8, hi_frac=0.8)

    @pytest.mark.parametrize("in_degree, out_degree, expected", [(3, 1, 3), (1, 3, -3), (2, 2, 0)])
    def test_signed_connectivity(self, in_degree, out_degree, expected):
        # Arrange, Act, Assert
        assert signed_connectivity(in_degree, out_degree) == expected

    def test_export_writes_dot_and_edge_list(self, tmp_path):
        # Arrange
        network = threshold_network(three_stock_entropy(), lo_frac=0.7, hi_frac=0.95)

        # Act
        paths = export_network(network, str(tmp_path / "networks" / "all_range"))

        # Assert
        assert set(paths) == {"dot", "edges"}
        assert os.path.exists(paths["dot"])
        with open(paths["edges"]) as f:
            lines = f.read().splitlines()
        assert lines[0] == "src,dst,I_ij,group"
        assert len(lines) == 5


class TestGroupNetworks:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.entropy = impact_entropy_matrix(rng.uniform(0.5, 2.0, 96), rng.uniform(0.5, 2.0, 96))

    def test_groups_partition_off_diagonal_cells(self):
        # Arrange, Act
        groups = group_networks(self.entropy, 40)

        # Assert
        coverage = sum(group.support.astype(int) for group in groups)
        np.testing.assert_array_equal(coverage, 1 - np.eye(96, dtype=int))
        assert all(group.network.edge_count == 228 for group in groups)

    def test_degrees_balance_edge_count(self):
        # Arrange, Act
        groups = group_networks(self.entropy, 40)

        # Assert
        for group in groups:
            network = group.network
            assert sum(network.in_degree().values()) == network.edge_count
            assert sum(network.out_degree().values()) == network.edge_count

    def test_groups_are_ranked_ascending(self):
        # Arrange, Act
        groups = group_networks(self.entropy, 40)

        # Assert
        uppers = [group.network.upper for group in groups]
        lowers = [group.network.lower for group in groups]
        assert uppers == sorted(uppers)
        assert all(upper <= lower for upper, lower in zip(uppers, lowers[1:]))

    def test_remainder_goes_to_last_group(self):
        # Arrange
        entropy = three_stock_entropy()

        # Act
        groups = group_networks(entropy, 4)

        # Assert
        assert [group.network.edge_count for group in groups] == [1, 1, 1, 3]

    def test_connectivity_table_has_row_per_stock_and_group(self):
        # Arrange
        groups = group_networks(three_stock_entropy(), 2)

        # Act
        table = connectivity_by_group(groups)

        # Assert
        assert len(table) == 6
        assert set(table["q"]) == {1, 2}

    @pytest.mark.parametrize("count", [0, 7])
    def test_group_count_out_of_range_raises(self, count):
        # Arrange, Act, Assert
        with pytest.raises(PreconditionError):
            group_networks(three_stock_entropy(), count)


def edge_set(network) -> set:
    return set(network.graph.edges)


class TestPermutationEquivariance:
    def setup_method(self):
        rng = np.random.default_rng(31)
        self.responses = rng.normal(0.0, 1e-3, size=(8, 8))
        self.symbols = [f"S{k + 1}" for k in range(8)]
        self.law = stats.norm(0.0, 1e-3)

    def entropy_for(self, order):
        responses = self.responses[np.ix_(order, order)]
        symbols = [self.symbols[k] for k in order]
        probabilities = probability_matrix(responses, self.law, bins=10, symbols=symbols)
        hu, hv = row_col_entropies(probabilities)
        return probabilities, impact_entropy_matrix(hu, hv, symbols)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_entropies_follow_stock_order(self, seed):
        # Arrange
        order = np.random.default_rng(seed).permutation(8)

        # Act
        base_p, base = self.entropy_for(np.arange(8))
        moved_p, moved = self.entropy_for(order)

        # Assert
        np.testing.assert_allclose(moved_p.values, base_p.values[np.ix_(order, order)], rtol=1e-12)
        np.testing.assert_allclose(moved.hu, base.hu[order], rtol=1e-12)
        np.testing.assert_allclose(moved.hv, base.hv[order], rtol=1e-12)
        np.testing.assert_allclose(moved.values, base.values[np.ix_(order, order)], rtol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_networks_are_unchanged_up_to_labels(self, seed):
        # Arrange
        order = np.random.default_rng(seed).permutation(8)
        _, base = self.entropy_for(np.arange(8))
        _, moved = self.entropy_for(order)

        # Act
        base_groups = group_networks(base, 4)
        moved_groups = group_networks(moved, 4)

        # Assert
        assert edge_set(threshold_network(moved, 0.9, 1.1)) == edge_set(threshold_network(base, 0.9, 1.1))
        for expected, actual in zip(base_groups, moved_groups):
            assert edge_set(actual.network) == edge_set(expected.network)


@pytest.mark.slow
class TestSyntheticNetworkStructure:
    def load_entropy(self, completed_run) -> EntropyMatrix:
        _, config, _ = completed_run
        frame = pd.read_csv(os.path.join(config.output_dir, "entropy", "entropies_all.csv"), dtype={"symbol": str})
        return impact_entropy_matrix(frame["h_u"].to_numpy(), frame["h_v"].to_numpy(), list(frame["symbol"]))

    @pytest.mark.parametrize("groups", [4, 12])
    def test_low_entropy_groups_are_better_connected(self, completed_run, groups):
        # Arrange
        entropy = self.load_entropy(completed_run)

        # Act
        networks = group_networks(entropy, groups)
        connectivity = {g.q: mean_incident_connectivity(g.network) for g in networks}

        # Assert
        low = np.mean([value for q, value in connectivity.items() if q <= groups / 4])
        high = np.mean([value for q, value in connectivity.items() if q > 3 * groups / 4])
        assert low > high

    def test_planted_stock_hubs_the_lowest_group(self, completed_run):
        # Arrange
        entropy = self.load_entropy(completed_run)

        # Act
        lowest = group_networks(entropy, 4)[0].network

        # Assert
        degrees = dict(lowest.graph.degree())
        assert max(degrees, key=degrees.get) == "S06"
