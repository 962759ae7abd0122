"""Tests for the experiment harness: synthetic data, ground truth, metrics,
file formats, and configuration loading.

Oracles used here are deliberately independent of the package code paths:
the conjugate posterior is recomputed with mean-centered scatter matrices,
integer allocations are checked against hand-worked largest-remainder
examples, and sample statistics are compared against the generating
parameters at law-of-large-numbers tolerances.
"""

import json
import os

import numpy as np
import pytest

import netvb.algorithms as alg
import netvb.expfam as ef
import netvb.gmm as gmm
import netvb.harness as hz
from netvb.expfam import natural_to_hyper


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------

MIX = dict(
    weights=[0.32, 0.45, 0.23],
    means=[[1.5, 3.5], [4.0, 4.0], [6.5, 4.5]],
    covariances=[
        [[0.6, 0.4], [0.4, 0.6]],
        [[0.6, -0.4], [-0.4, 0.6]],
        [[0.6, 0.4], [0.4, 0.6]],
    ],
)

GROUPS = [
    ((0, 15), (0.8, 0.1, 0.1)),
    ((15, 35), (0.05, 0.9, 0.05)),
    ((35, 50), (0.2, 0.2, 0.6)),
]


def grouped_spec(seed=0, count=100):
    proportions = np.empty((50, 3))
    for (lo, hi), p in GROUPS:
        proportions[lo:hi] = p
    return hz.make_synthetic_spec(
        MIX["weights"],
        MIX["means"],
        MIX["covariances"],
        np.full(50, count),
        node_proportions=proportions,
        seed=seed,
    )


def two_cluster_spec(seed=1, count=30, n_nodes=4):
    return hz.make_synthetic_spec(
        [0.5, 0.5],
        [[-3.0, 0.0], [3.0, 0.0]],
        [np.eye(2) * 0.5, np.eye(2) * 0.5],
        np.full(n_nodes, count),
        seed=seed,
    )


def conjugate_posterior_oracle(points, labels, K, alpha0, m0, beta0, w0_inv, nu0):
    """Closed-form posterior from hard assignments, written the textbook way
    (mean-centered scatter), independent of the package's moment pipeline."""
    D = points.shape[1]
    alpha = np.empty(K)
    m = np.empty((K, D))
    beta = np.empty(K)
    w_inv = np.empty((K, D, D))
    nu = np.empty(K)
    for k in range(K):
        sel = points[labels == k]
        n_k = sel.shape[0]
        alpha[k] = alpha0 + n_k
        beta[k] = beta0 + n_k
        nu[k] = nu0 + n_k
        if n_k == 0:
            m[k] = m0
            w_inv[k] = w0_inv
            continue
        xbar = sel.mean(axis=0)
        centered = sel - xbar
        scatter = centered.T @ centered
        m[k] = (beta0 * m0 + n_k * xbar) / beta[k]
        dm = xbar - m0
        w_inv[k] = w0_inv + scatter + (beta0 * n_k / (beta0 + n_k)) * np.outer(dm, dm)
    return alpha, m, beta, w_inv, nu


# ---------------------------------------------------------------------------
# synthetic specification and generation
# ---------------------------------------------------------------------------


class TestMakeSyntheticSpec:
    def test_fields_roundtrip(self):
        spec = grouped_spec(seed=42)
        assert spec.weights.shape == (3,)
        assert spec.means.shape == (3, 2)
        assert spec.covariances.shape == (3, 2, 2)
        assert spec.node_counts.shape == (50,)
        assert spec.node_proportions.shape == (50, 3)
        assert spec.seed == 42

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError, match="sum to 1"):
            hz.make_synthetic_spec(
                [0.5, 0.6], [[0.0], [1.0]], [np.eye(1), np.eye(1)], [10]
            )
        with pytest.raises(ValueError, match="sum to 1"):
            hz.make_synthetic_spec(
                [1.0, 0.0], [[0.0], [1.0]], [np.eye(1), np.eye(1)], [10]
            )

    def test_rejects_indefinite_covariance(self):
        bad = [[1.0, 2.0], [2.0, 1.0]]  # eigenvalues 3 and -1
        with pytest.raises(ValueError, match="covariance 1 is not positive definite"):
            hz.make_synthetic_spec(
                [0.5, 0.5],
                [[0.0, 0.0], [1.0, 1.0]],
                [np.eye(2), bad],
                [10],
            )

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError, match="non-negative"):
            hz.make_synthetic_spec([1.0], [[0.0]], [np.eye(1)], [5, -1])

    def test_rejects_bad_proportions(self):
        with pytest.raises(ValueError, match=r"\(n, K\)"):
            hz.make_synthetic_spec(
                [0.5, 0.5],
                [[0.0], [1.0]],
                [np.eye(1), np.eye(1)],
                [10, 10],
                node_proportions=[[0.5, 0.5]],
            )
        with pytest.raises(ValueError, match="sum to 1"):
            hz.make_synthetic_spec(
                [0.5, 0.5],
                [[0.0], [1.0]],
                [np.eye(1), np.eye(1)],
                [10],
                node_proportions=[[0.7, 0.7]],
            )


class TestExactCounts:
    def test_exact_when_divisible(self):
        counts = hz._exact_counts(100, np.array([0.8, 0.1, 0.1]))
        assert counts.tolist() == [80, 10, 10]
        assert counts.sum() == 100

    def test_largest_remainder(self):
        # ideal 3.15, 2.24, 1.61 -> floors (3, 2, 1), the spare unit goes to
        # the largest fractional part (0.61)
        counts = hz._exact_counts(7, np.array([0.45, 0.32, 0.23]))
        assert counts.tolist() == [3, 2, 2]

    def test_ties_go_to_lower_index(self):
        counts = hz._exact_counts(2, np.full(4, 0.25))
        assert counts.tolist() == [1, 1, 0, 0]

    def test_always_sums_to_total(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            K = int(rng.integers(1, 6))
            p = rng.dirichlet(np.ones(K))
            total = int(rng.integers(0, 200))
            counts = hz._exact_counts(total, p)
            assert counts.sum() == total
            assert np.all(counts >= 0)
            assert np.all(np.abs(counts - total * p) < 1.0)


class TestGenerateSynthetic:
    def test_grouped_label_counts_are_exact(self):
        ds = hz.generate_synthetic(grouped_spec())
        assert ds.points.shape == (5000, 2)
        for (lo, hi), p in GROUPS:
            expected = hz._exact_counts(100, np.asarray(p))
            for i in range(lo, hi):
                got = np.bincount(ds.labels[ds.node_of == i], minlength=3)
                assert got.tolist() == expected.tolist(), f"node {i}"

    def test_points_grouped_by_node(self):
        ds = hz.generate_synthetic(grouped_spec())
        assert np.all(np.diff(ds.node_of) >= 0)
        assert np.bincount(ds.node_of, minlength=50).tolist() == [100] * 50

    def test_sample_moments_match_generator(self):
        # one component, many samples: LLN on mean and covariance
        n = 100_000
        mean = np.array([1.5, -2.0])
        cov = np.array([[0.6, 0.4], [0.4, 0.6]])
        spec = hz.make_synthetic_spec([1.0], [mean], [cov], [n], seed=11)
        ds = hz.generate_synthetic(spec)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(ds.points.mean(axis=0) - mean) < 5 * se)
        centered = ds.points - ds.points.mean(axis=0)
        sample_cov = centered.T @ centered / (n - 1)
        assert np.allclose(sample_cov, cov, atol=0.02)

    def test_iid_labels_follow_weights(self):
        spec = hz.make_synthetic_spec(
            MIX["weights"], MIX["means"], MIX["covariances"], [20_000], seed=3
        )
        ds = hz.generate_synthetic(spec)
        frac = np.bincount(ds.labels, minlength=3) / 20_000
        # binomial SE is at most 0.5/sqrt(n) ~ 0.0035 per component
        assert np.all(np.abs(frac - np.asarray(MIX["weights"])) < 0.02)

    def test_deterministic_in_seed(self):
        a = hz.generate_synthetic(grouped_spec(seed=9))
        b = hz.generate_synthetic(grouped_spec(seed=9))
        c = hz.generate_synthetic(grouped_spec(seed=10))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.labels, b.labels)
        assert not np.array_equal(a.points, c.points)

    def test_empty_dataset(self):
        spec = hz.make_synthetic_spec([1.0], [[0.0, 0.0]], [np.eye(2)], [0, 0, 0])
        ds = hz.generate_synthetic(spec)
        assert ds.points.shape == (0, 2)
        assert ds.labels.shape == (0,)
        assert ds.n_nodes == 3

    def test_node_datasets_split(self):
        ds = hz.generate_synthetic(two_cluster_spec())
        parts = hz.node_datasets(ds)
        assert len(parts) == 4
        rebuilt = np.concatenate([p.points for p in parts])
        assert np.array_equal(rebuilt, ds.points)
        labels = hz.labels_by_node(ds)
        assert sum(y.size for y in labels) == ds.labels.size


# ---------------------------------------------------------------------------
# ground-truth posterior
# ---------------------------------------------------------------------------


class TestGroundTruthPosterior:
    def test_matches_conjugate_oracle(self):
        ds = hz.generate_synthetic(two_cluster_spec(count=25))
        model = gmm.make_model(2, 2, ds.n_nodes)
        post = natural_to_hyper(hz.ground_truth_posterior(ds, model))
        pri = model.priors
        alpha, m, beta, w_inv, nu = conjugate_posterior_oracle(
            ds.points, ds.labels, 2, pri.alpha[0], pri.m[0], pri.beta[0],
            np.linalg.inv(pri.W[0]), pri.nu[0]
        )
        np.testing.assert_allclose(post.alpha, alpha, rtol=1e-12)
        np.testing.assert_allclose(post.m, m, rtol=1e-10)
        np.testing.assert_allclose(post.beta, beta, rtol=1e-12)
        np.testing.assert_allclose(post.nu, nu, rtol=1e-12)
        np.testing.assert_allclose(
            np.linalg.inv(post.W), w_inv, rtol=1e-9, atol=1e-12
        )

    def test_counts_enter_dirichlet(self):
        # all points carry label 0: alpha = (1 + n, 1, 1)
        points = np.random.default_rng(0).normal(size=(40, 2))
        ds = hz.LabeledDataset(
            points=points,
            labels=np.zeros(40, dtype=np.int64),
            node_of=np.zeros(40, dtype=np.int64),
            n_nodes=1,
        )
        model = gmm.make_model(3, 2, 1)
        post = natural_to_hyper(hz.ground_truth_posterior(ds, model))
        np.testing.assert_allclose(post.alpha, [41.0, 1.0, 1.0], rtol=1e-13)

    def test_empty_component_keeps_prior(self):
        ds = hz.generate_synthetic(two_cluster_spec(count=10))
        model = gmm.make_model(3, 2, ds.n_nodes)  # third component never used
        post = natural_to_hyper(hz.ground_truth_posterior(ds, model))
        pri = model.priors
        assert post.alpha[2] == pytest.approx(pri.alpha[2], rel=1e-14)
        np.testing.assert_allclose(post.m[2], pri.m[2], atol=1e-14)
        assert post.beta[2] == pytest.approx(pri.beta[2], rel=1e-14)
        np.testing.assert_allclose(post.W[2], pri.W[2], rtol=1e-13)

    def test_single_point_closed_form(self):
        # one observation x with unit prior strength: m = x/2, beta = 2
        x = 3.0
        ds = hz.LabeledDataset(
            points=np.array([[x]]),
            labels=np.array([0]),
            node_of=np.array([0]),
            n_nodes=1,
        )
        model = gmm.make_model(1, 1, 1)
        post = natural_to_hyper(hz.ground_truth_posterior(ds, model))
        assert post.beta[0] == pytest.approx(2.0, rel=1e-14)
        assert post.m[0, 0] == pytest.approx(x / 2.0, rel=1e-13)
        assert post.nu[0] == pytest.approx(model.priors.nu[0] + 1.0, rel=1e-14)
        w_inv = 1.0 / post.W[0, 0, 0]
        assert w_inv == pytest.approx(1.0 / model.priors.W[0, 0, 0] + x * x / 2.0, rel=1e-12)

    def test_requires_labels(self):
        ds = hz.LabeledDataset(
            points=np.zeros((3, 2)),
            labels=None,
            node_of=np.zeros(3, dtype=np.int64),
            n_nodes=1,
        )
        with pytest.raises(ValueError, match="no labels"):
            hz.ground_truth_posterior(ds, gmm.make_model(2, 2, 1))

    def test_rejects_out_of_range_labels(self):
        ds = hz.LabeledDataset(
            points=np.zeros((3, 2)),
            labels=np.array([0, 1, 2]),
            node_of=np.zeros(3, dtype=np.int64),
            n_nodes=1,
        )
        with pytest.raises(ValueError, match=r"\[0, 2\)"):
            hz.ground_truth_posterior(ds, gmm.make_model(2, 2, 1))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


class TestMeanKlCost:
    @pytest.fixture()
    def truth(self):
        ds = hz.generate_synthetic(two_cluster_spec(count=25))
        return hz.ground_truth_posterior(ds, gmm.make_model(2, 2, ds.n_nodes))

    def test_zero_at_truth(self, truth):
        mean, std = hz.mean_kl_cost([truth, ef.flatten(truth)], truth)
        assert mean == pytest.approx(0.0, abs=1e-10)
        assert std == pytest.approx(0.0, abs=1e-10)

    def test_two_point_population_stats(self, truth):
        # components have distinct location parameters, so the alignment is
        # the identity and the cost equals the plain divergence
        q = ef.flatten(truth).copy()
        q[: truth.num_components] += 0.5  # strengthen the weight counts only
        kl = ef.kl_global(ef.unflatten(q, truth.num_components, truth.dim), truth)
        assert kl > 0.0
        mean, std = hz.mean_kl_cost([ef.flatten(truth), q], truth)
        assert mean == pytest.approx(kl / 2.0, rel=1e-12)
        assert std == pytest.approx(kl / 2.0, rel=1e-12)

    def test_accepts_node_states(self, truth):
        states = [
            alg.NodeState(phi=truth, lam=None, r=None),
            alg.NodeState(phi=ef.flatten(truth), lam=None, r=None),
        ]
        mean, std = hz.mean_kl_cost(states, truth)
        assert mean == pytest.approx(0.0, abs=1e-10)


class TestClusteringAccuracy:
    def test_perfect_after_relabeling(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, size=200)
        perm = np.array([2, 0, 1])
        resp = np.eye(3)[perm[labels]]  # clusters are a relabeling of truth
        assert hz.clustering_accuracy(resp, labels) == 1.0

    def test_pooled_equals_per_node(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=100)
        resp = rng.dirichlet(np.ones(2), size=100)
        pooled = hz.clustering_accuracy(resp, labels)
        split = hz.clustering_accuracy(
            [resp[:30], resp[30:]], [labels[:30], labels[30:]]
        )
        assert pooled == split

    def test_uninformative_responsibilities(self):
        # uniform rows: every point lands in cluster 0, the best matching
        # captures the majority class only
        labels = np.array([0] * 55 + [1] * 45)
        resp = np.full((100, 2), 0.5)
        assert hz.clustering_accuracy(resp, labels) == pytest.approx(0.55)

    def test_empty_blocks_are_skipped(self):
        resp = np.eye(2)[np.array([0, 1, 1])]
        labels = np.array([0, 1, 1])
        acc = hz.clustering_accuracy(
            [resp, np.zeros((0, 2))], [labels, np.zeros(0, dtype=np.int64)]
        )
        assert acc == 1.0

    def test_errors(self):
        with pytest.raises(ValueError, match="length"):
            hz.clustering_accuracy(np.eye(2), np.array([0]))
        with pytest.raises(ValueError, match="component count"):
            hz.clustering_accuracy(
                [np.eye(2), np.eye(3)],
                [np.array([0, 1]), np.array([0, 1, 2])],
            )
        with pytest.raises(ValueError, match=r"\[0, 2\)"):
            hz.clustering_accuracy(np.eye(2), np.array([0, 5]))
        with pytest.raises(ValueError, match="no points"):
            hz.clustering_accuracy([np.zeros((0, 2))], [np.zeros(0, dtype=np.int64)])


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------


class TestInitialStates:
    def test_deterministic_and_in_domain(self):
        ds = hz.generate_synthetic(two_cluster_spec())
        model = gmm.make_model(2, 2, 4)
        a = hz.initial_states(model, ds.points, 4, seed=5)
        b = hz.initial_states(model, ds.points, 4, seed=5)
        c = hz.initial_states(model, ds.points, 4, seed=6)
        assert len(a) == 4
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(ef.flatten(pa), ef.flatten(pb))
        assert not np.array_equal(ef.flatten(a[0]), ef.flatten(c[0]))
        for p in a:
            assert bool(ef.in_domain_flat(ef.flatten(p), 2, 2))

    def test_seeds_locations_at_data_points(self):
        ds = hz.generate_synthetic(two_cluster_spec())
        model = gmm.make_model(2, 2, 4)
        pri = model.priors
        for p in hz.initial_states(model, ds.points, 4, seed=5):
            h = natural_to_hyper(p)
            np.testing.assert_allclose(h.alpha, pri.alpha, rtol=1e-13)
            np.testing.assert_allclose(h.beta, pri.beta, rtol=1e-13)
            np.testing.assert_allclose(h.nu, pri.nu, rtol=1e-13)
            np.testing.assert_allclose(h.W, pri.W, rtol=1e-10, atol=1e-13)
            # every seeded location is one of the observed points
            for row in h.m:
                assert np.any(np.all(np.isclose(ds.points, row), axis=1))

    def test_shared_across_nodes_distinct_across_components(self):
        # Consensus-style exchanges average node states slot by slot, so the
        # component identities must agree across nodes from the start: every
        # node gets the same initialization, and the K seeded locations are
        # distinct points.
        ds = hz.generate_synthetic(two_cluster_spec())
        model = gmm.make_model(2, 2, 4)
        states = hz.initial_states(model, ds.points, 4, seed=7)
        flat = np.stack([ef.flatten(p) for p in states])
        assert np.unique(flat, axis=0).shape[0] == 1
        h = natural_to_hyper(states[0])
        assert not np.allclose(h.m[0], h.m[1])

    def test_too_few_points_fall_back_to_jittered_prior(self):
        model = gmm.make_model(2, 3, 2)
        for pts in (np.zeros((0, 3)), np.array([[1.0, 2.0, 3.0]])):
            states = hz.initial_states(model, pts, 2, seed=1)
            for p in states:
                assert np.all(np.isfinite(ef.flatten(p)))
                assert bool(ef.in_domain_flat(ef.flatten(p), 2, 3))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


class TestLoadCsvDataset:
    def test_plain_points(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("1.5,2.25\n-0.5,3.0\n\n4.0,5.0\n")
        points, labels = hz.load_csv_dataset(path)
        np.testing.assert_array_equal(
            points, [[1.5, 2.25], [-0.5, 3.0], [4.0, 5.0]]
        )
        assert labels is None

    def test_labeled_points(self, tmp_path):
        path = tmp_path / "pts.csv"
        path.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        points, labels = hz.load_csv_dataset(path, has_labels=True)
        np.testing.assert_array_equal(points, [[1.0, 2.0], [3.0, 4.0]])
        assert labels.tolist() == [0, 1]

    def test_ragged_rows_name_the_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0,4.0\n5.0\n")
        with pytest.raises(ValueError, match="row 3 has 1 columns, expected 2"):
            hz.load_csv_dataset(path)

    def test_non_numeric_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0,oops\n")
        with pytest.raises(ValueError, match="row 2, column 2: not a number"):
            hz.load_csv_dataset(path)

    def test_fractional_labels_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,0.5\n")
        with pytest.raises(ValueError, match="non-negative integers"):
            hz.load_csv_dataset(path, has_labels=True)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("\n\n")
        with pytest.raises(ValueError, match="no data rows"):
            hz.load_csv_dataset(path)


class TestPartitionToNodes:
    def test_uniform_balances_sizes(self):
        points = np.arange(23, dtype=np.float64).reshape(-1, 1)
        ds = hz.partition_to_nodes(points, None, 5, policy="uniform", seed=3)
        sizes = np.bincount(ds.node_of, minlength=5)
        assert sizes.sum() == 23
        assert sizes.max() - sizes.min() <= 1
        again = hz.partition_to_nodes(points, None, 5, policy="uniform", seed=3)
        assert np.array_equal(ds.node_of, again.node_of)
        other = hz.partition_to_nodes(points, None, 5, policy="uniform", seed=4)
        assert not np.array_equal(ds.node_of, other.node_of)

    def test_contiguous_keeps_order(self):
        points = np.arange(10, dtype=np.float64).reshape(-1, 1)
        ds = hz.partition_to_nodes(points, None, 3, policy="contiguous")
        assert np.all(np.diff(ds.node_of) >= 0)
        assert np.bincount(ds.node_of).tolist() == [4, 3, 3]

    def test_more_nodes_than_points(self):
        points = np.zeros((2, 1))
        ds = hz.partition_to_nodes(points, None, 5, policy="contiguous")
        assert ds.n_nodes == 5
        assert np.bincount(ds.node_of, minlength=5).min() == 0

    def test_labels_carried_through(self):
        points = np.zeros((4, 1))
        labels = [3, 1, 2, 0]
        ds = hz.partition_to_nodes(points, labels, 2, policy="contiguous")
        assert ds.labels.tolist() == labels
        assert ds.labels.dtype == np.int64

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="at least 1"):
            hz.partition_to_nodes(np.zeros((3, 1)), None, 0)
        with pytest.raises(ValueError, match="unknown partition policy"):
            hz.partition_to_nodes(np.zeros((3, 1)), None, 2, policy="striped")


# ---------------------------------------------------------------------------
# file output
# ---------------------------------------------------------------------------


class TestDatasetCsvRoundtrip:
    def test_labeled_roundtrip_is_exact(self, tmp_path):
        ds = hz.generate_synthetic(two_cluster_spec())
        path = tmp_path / "ds.csv"
        hz.write_dataset_csv(path, ds)
        back = hz.read_dataset_csv(path)
        assert np.array_equal(back.points, ds.points)  # repr() is lossless
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(back.node_of, ds.node_of)
        assert back.n_nodes == ds.n_nodes

    def test_unlabeled_roundtrip(self, tmp_path):
        ds = hz.LabeledDataset(
            points=np.array([[1.0, 2.0], [3.0, 4.0]]),
            labels=None,
            node_of=np.array([0, 1]),
            n_nodes=2,
        )
        path = tmp_path / "ds.csv"
        hz.write_dataset_csv(path, ds)
        back = hz.read_dataset_csv(path)
        assert back.labels is None
        assert np.array_equal(back.points, ds.points)

    def test_missing_node_header_rejected(self, tmp_path):
        path = tmp_path / "ds.csv"
        path.write_text("# columns: x0,node\n1.0,0\n")
        with pytest.raises(ValueError, match="nodes"):
            hz.read_dataset_csv(path)

    def test_node_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "ds.csv"
        path.write_text("# columns: x0,node\n# nodes: 2\n1.0,5\n")
        with pytest.raises(ValueError, match="out of range"):
            hz.read_dataset_csv(path)

    def test_no_temp_file_left_behind(self, tmp_path):
        ds = hz.generate_synthetic(two_cluster_spec(count=3))
        hz.write_dataset_csv(tmp_path / "ds.csv", ds)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ds.csv"]


class TestStatesCsv:
    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        model = gmm.make_model(2, 2, 3)
        states = hz.initial_states(model, rng.normal(size=(20, 2)), 3, seed=1)
        path = tmp_path / "states.csv"
        hz.write_states_csv(path, states, 2, 2)
        back = hz.read_states_csv(path)
        expect = np.stack([ef.flatten(p) for p in states])
        assert np.array_equal(back, expect)

    def test_header_names_every_coordinate(self, tmp_path):
        path = tmp_path / "states.csv"
        hz.write_states_csv(path, np.zeros((1, hz.flat_size(2, 2))), 2, 2)
        header = path.read_text().splitlines()[0]
        assert header.startswith("node,phi_0,")
        assert header.endswith(f"phi_{hz.flat_size(2, 2) - 1}")

    def test_rejects_wrong_length(self, tmp_path):
        with pytest.raises(ValueError, match="state 0 has length"):
            hz.write_states_csv(tmp_path / "x.csv", np.zeros((1, 3)), 2, 2)

    def test_read_rejects_other_files(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("iter,algo\n1,cvb\n")
        with pytest.raises(ValueError, match="not a states CSV"):
            hz.read_states_csv(path)


class TestTraceCsv:
    def make_trace(self, rows=3):
        return alg.RunTrace(
            iterations=np.arange(1, rows + 1),
            mean_cost=np.linspace(5.0, 3.0, rows),
            std_cost=np.full(rows, 0.25),
            consensus_disagreement=np.linspace(1.0, 0.1, rows),
            elapsed_ms=np.linspace(2.0, 6.0, rows),
        )

    def test_layout_and_precision(self, tmp_path):
        path = tmp_path / "trace.csv"
        hz.write_trace_csv(path, [("cvb", self.make_trace()), ("dsvb", self.make_trace())])
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,algo,mean_kl,std_kl,consensus_disagreement,elapsed_ms"
        assert len(lines) == 1 + 6
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "cvb"
        assert float(first[2]) == 5.0  # repr round-trips exactly

    def test_writes_are_byte_stable(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        hz.write_trace_csv(a, [("x", self.make_trace())])
        hz.write_trace_csv(b, [("x", self.make_trace())])
        assert a.read_bytes() == b.read_bytes()


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


class TestBundledConfigs:
    def test_all_bundled_configs_load(self):
        for name in (
            "imbalanced50",
            "unequal_counts50",
            "size30",
            "size80",
            "size100",
        ):
            cfg = hz.load_experiment_config(hz.bundled_config_path(name))
            assert len(cfg.algorithms) == 5
            kinds = [c.kind for _, c in cfg.algorithms]
            assert kinds == list(alg.ALGORITHM_KINDS)
            assert all(c.max_iters == 3000 for _, c in cfg.algorithms)

    def test_suffix_is_optional(self):
        assert hz.bundled_config_path("size30") == hz.bundled_config_path("size30.json")

    def test_unknown_name_lists_available(self):
        with pytest.raises(ValueError, match="imbalanced50.json"):
            hz.bundled_config_path("nonexistent")

    def test_network_sides_scale_with_node_count(self):
        # constant expected density: area grows linearly with n
        sides = {}
        for name, n in (("size30", 30), ("imbalanced50", 50), ("size100", 100)):
            cfg = hz.load_experiment_config(hz.bundled_config_path(name))
            assert cfg.network["n"] == n
            sides[n] = cfg.network["side"]
        assert sides[30] == pytest.approx(3.5 * np.sqrt(30 / 50), abs=1e-9)
        assert sides[100] == pytest.approx(3.5 * np.sqrt(2.0), abs=1e-9)


class TestLoadExperimentConfig:
    def write(self, tmp_path, payload, name="exp.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload) if isinstance(payload, dict) else payload)
        return path

    def valid_payload(self):
        return {
            "seed": 7,
            "network": {"n": 4, "side": 1.0, "radius": 2.0},
            "data": {
                "weights": [1.0],
                "means": [[0.0]],
                "covariances": [[[1.0]]],
                "node_counts": 5,
            },
            "model": {"K": 1, "D": 1},
            "algorithms": [{"kind": "cvb"}, {"kind": "dsvb", "tau": 0.5}],
            "max_iters": 12,
        }

    def test_parses_overrides_and_defaults(self, tmp_path):
        payload = self.valid_payload()
        payload["algorithms"].append(
            {"kind": "dvb_admm", "name": "admm_fast", "max_iters": 3, "eval_stride": 2}
        )
        cfg = hz.load_experiment_config(self.write(tmp_path, payload))
        assert cfg.seed == 7
        by_name = dict(cfg.algorithms)
        assert by_name["cvb"].max_iters == 12 and by_name["cvb"].eval_stride == 1
        assert by_name["dsvb"].tau == 0.5
        assert by_name["admm_fast"].max_iters == 3
        assert by_name["admm_fast"].eval_stride == 2
        assert cfg.base_dir == str(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError, match="config file not found"):
            hz.load_experiment_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        with pytest.raises(ValueError, match="invalid JSON"):
            hz.load_experiment_config(self.write(tmp_path, "{not json"))

    def test_missing_sections(self, tmp_path):
        for field in ("network", "data", "model", "algorithms"):
            payload = self.valid_payload()
            del payload[field]
            with pytest.raises(ValueError, match=f"missing required field '{field}'"):
                hz.load_experiment_config(self.write(tmp_path, payload))

    def test_empty_algorithms(self, tmp_path):
        payload = self.valid_payload()
        payload["algorithms"] = []
        with pytest.raises(ValueError, match="non-empty"):
            hz.load_experiment_config(self.write(tmp_path, payload))

    def test_unknown_kind(self, tmp_path):
        payload = self.valid_payload()
        payload["algorithms"] = [{"kind": "sgd"}]
        with pytest.raises(ValueError, match="unknown algorithm kind 'sgd'"):
            hz.load_experiment_config(self.write(tmp_path, payload))

    def test_duplicate_names(self, tmp_path):
        payload = self.valid_payload()
        payload["algorithms"] = [{"kind": "cvb"}, {"kind": "cvb"}]
        with pytest.raises(ValueError, match="duplicate algorithm name"):
            hz.load_experiment_config(self.write(tmp_path, payload))

    def test_checks_referenced_paths(self, tmp_path):
        payload = self.valid_payload()
        payload["data"] = {"path": "missing.csv"}
        with pytest.raises(ValueError, match="missing.csv"):
            hz.load_experiment_config(self.write(tmp_path, payload))
        # present file passes the existence check
        (tmp_path / "present.csv").write_text("1.0\n")
        payload["data"] = {"path": "present.csv"}
        cfg = hz.load_experiment_config(self.write(tmp_path, payload))
        assert cfg.data["path"] == "present.csv"


class TestSpecFromConfig:
    def base(self):
        return {
            "weights": [0.5, 0.5],
            "means": [[-1.0], [1.0]],
            "covariances": [[[1.0]], [[1.0]]],
        }

    def test_scalar_counts(self):
        spec = hz.spec_from_config(dict(self.base(), node_counts=7), 3, seed=0)
        assert spec.node_counts.tolist() == [7, 7, 7]
        assert spec.node_proportions is None

    def test_list_counts_must_match(self):
        spec = hz.spec_from_config(dict(self.base(), node_counts=[1, 2, 3]), 3, seed=0)
        assert spec.node_counts.tolist() == [1, 2, 3]
        with pytest.raises(ValueError, match="must list 3 entries"):
            hz.spec_from_config(dict(self.base(), node_counts=[1, 2]), 3, seed=0)

    def test_range_counts_drawn_within_bounds(self):
        cfg = dict(self.base(), node_counts={"low": 40, "high": 160})
        spec = hz.spec_from_config(cfg, 50, seed=5)
        assert spec.node_counts.shape == (50,)
        assert spec.node_counts.min() >= 40 and spec.node_counts.max() <= 160
        assert np.unique(spec.node_counts).size > 5  # actually random
        again = hz.spec_from_config(cfg, 50, seed=5)
        assert np.array_equal(spec.node_counts, again.node_counts)
        other = hz.spec_from_config(cfg, 50, seed=6)
        assert not np.array_equal(spec.node_counts, other.node_counts)

    def test_groups_tile_the_nodes(self):
        cfg = dict(
            self.base(),
            node_counts=4,
            node_groups=[
                {"nodes": [0, 2], "proportions": [1.0, 0.0]},
                {"nodes": [2, 4], "proportions": [0.0, 1.0]},
            ],
        )
        # proportions of exactly 0 are allowed per node even though global
        # weights must be positive
        spec = hz.spec_from_config(cfg, 4, seed=0)
        np.testing.assert_array_equal(
            spec.node_proportions, [[1, 0], [1, 0], [0, 1], [0, 1]]
        )

    def test_group_overlap_rejected(self):
        cfg = dict(
            self.base(),
            node_counts=4,
            node_groups=[
                {"nodes": [0, 3], "proportions": [1.0, 0.0]},
                {"nodes": [2, 4], "proportions": [0.0, 1.0]},
            ],
        )
        with pytest.raises(ValueError, match="overlaps another"):
            hz.spec_from_config(cfg, 4, seed=0)

    def test_uncovered_node_rejected(self):
        cfg = dict(
            self.base(),
            node_counts=4,
            node_groups=[{"nodes": [0, 3], "proportions": [1.0, 0.0]}],
        )
        with pytest.raises(ValueError, match="node 3 not covered"):
            hz.spec_from_config(cfg, 4, seed=0)

    def test_out_of_bounds_group_rejected(self):
        cfg = dict(
            self.base(),
            node_counts=4,
            node_groups=[{"nodes": [0, 5], "proportions": [1.0, 0.0]}],
        )
        with pytest.raises(ValueError, match="out of bounds"):
            hz.spec_from_config(cfg, 4, seed=0)

    def test_missing_mixture_field(self):
        with pytest.raises(ValueError, match="missing 'covariances'"):
            hz.spec_from_config(
                {"weights": [1.0], "means": [[0.0]], "node_counts": 3}, 2, seed=0
            )


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def small_experiment(tmp_path, max_iters=5):
    return hz.ExperimentConfig(
        seed=3,
        network={"n": 6, "side": 1.5, "radius": 1.0},
        data={
            "weights": [0.5, 0.5],
            "means": [[-2.0, 0.0], [2.0, 0.0]],
            "covariances": [[[0.5, 0.0], [0.0, 0.5]], [[0.5, 0.0], [0.0, 0.5]]],
            "node_counts": 20,
        },
        model={"K": 2, "D": 2},
        algorithms=(
            ("cvb", alg.AlgoConfig(kind="cvb", max_iters=max_iters)),
            ("dsvb", alg.AlgoConfig(kind="dsvb", max_iters=max_iters)),
        ),
        base_dir=str(tmp_path),
    )


class TestRunExperiment:
    def test_shared_inputs_across_algorithms(self, tmp_path):
        res = hz.run_experiment(small_experiment(tmp_path))
        assert sorted(res.results) == ["cvb", "dsvb"]
        assert res.net.n == 6
        assert res.dataset.points.shape == (120, 2)
        assert res.truth is not None
        assert len(res.inits) == 6
        for name, (trace, states) in res.results.items():
            assert trace.iterations[-1] == 5
            assert np.all(np.isfinite(trace.mean_cost))
            assert len(states) == 6
            for st in states:
                assert bool(ef.in_domain_flat(ef.flatten(st.phi), 2, 2))

    def test_deterministic(self, tmp_path):
        a = hz.run_experiment(small_experiment(tmp_path))
        b = hz.run_experiment(small_experiment(tmp_path))
        for name in a.results:
            np.testing.assert_array_equal(
                a.results[name][0].mean_cost, b.results[name][0].mean_cost
            )
            for sa, sb in zip(a.results[name][1], b.results[name][1]):
                np.testing.assert_array_equal(ef.flatten(sa.phi), ef.flatten(sb.phi))

    def test_seed_override_changes_data(self, tmp_path):
        a = hz.run_experiment(small_experiment(tmp_path))
        b = hz.run_experiment(small_experiment(tmp_path), seed=99)
        assert not np.array_equal(a.dataset.points, b.dataset.points)

    def test_kinds_filter(self, tmp_path):
        res = hz.run_experiment(small_experiment(tmp_path), kinds=["dsvb"])
        assert sorted(res.results) == ["dsvb"]
        with pytest.raises(ValueError, match="no configured algorithm matches"):
            hz.run_experiment(small_experiment(tmp_path), kinds=["qvb"])

    def test_from_json_end_to_end(self, tmp_path):
        payload = {
            "seed": 13,
            "network": {"n": 5, "side": 1.2, "radius": 1.5},
            "data": {
                "weights": [0.5, 0.5],
                "means": [[-2.0, 0.0], [2.0, 0.0]],
                "covariances": [[[0.4, 0.0], [0.0, 0.4]], [[0.4, 0.0], [0.0, 0.4]]],
                "node_counts": {"low": 5, "high": 15},
            },
            "model": {"K": 2, "D": 2},
            "algorithms": [{"kind": "cvb"}, {"kind": "dvb_admm", "rho": 0.5}],
            "max_iters": 4,
            "eval_stride": 2,
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(payload))
        cfg = hz.load_experiment_config(path)
        res = hz.run_experiment(cfg)
        assert res.dataset.n_nodes == 5
        trace = res.results["dvb_admm"][0]
        assert trace.iterations.tolist() == [2, 4]
        out = tmp_path / "trace.csv"
        hz.write_trace_csv(out, [(n, t) for n, (t, s) in sorted(res.results.items())])
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 2
