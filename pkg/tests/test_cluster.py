import numpy as np
import pytest
from scipy.cluster.hierarchy import linkage as scipy_linkage
from scipy.spatial.distance import squareform
from sklearn.metrics import adjusted_rand_score, silhouette_score

from psolab import cluster


def planted_vectors(rng, k=3, per_cluster=5, dim=12, spread=0.01):
    centers = rng.normal(size=(k, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    vectors, truth = [], []
    for c in range(k):
        for _ in range(per_cluster):
            vectors.append(centers[c] + spread * rng.normal(size=dim))
            truth.append(c)
    return np.array(vectors), np.array(truth)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def test_distance_matrix_basics():
    v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    d = cluster.distance_matrix(v, "euclidean")
    assert d[0, 1] == 0.0
    assert d[0, 2] == pytest.approx(np.sqrt(2.0))
    c = cluster.distance_matrix(v, "cosine")
    assert c[0, 1] == 0.0
    assert c[0, 2] == pytest.approx(1.0)  # orthogonal
    collinear = cluster.distance_matrix(np.array([[3.0, 4.0], [6.0, 8.0]]), "cosine")
    assert collinear[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_distance_matrix_rejections():
    with pytest.raises(cluster.ClusteringError):
        cluster.distance_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]), "cosine")
    with pytest.raises(cluster.ClusteringError):
        cluster.distance_matrix(np.array([[1.0, 2.0]]), "euclidean")
    with pytest.raises(cluster.ClusteringError):
        cluster.distance_matrix(np.eye(3), "manhattan")


# ---------------------------------------------------------------------------
# agglomeration
# ---------------------------------------------------------------------------

def test_three_points_on_a_line_single_linkage():
    points = np.array([[0.0], [1.0], [10.0]])
    d = cluster.distance_matrix(points, "euclidean")
    dendro = cluster.agglomerate(d, "single")
    first = dendro.merges[0]
    assert {first[0], first[1]} == {0, 1}
    assert first[2] == pytest.approx(1.0)
    assert dendro.merges[1][2] == pytest.approx(9.0)  # single: min(10, 9)


def test_two_tight_pairs():
    points = np.array([[0.0], [0.1], [100.0], [100.1]])
    d = cluster.distance_matrix(points, "euclidean")
    dendro = cluster.agglomerate(d, "complete")
    heights = [m[2] for m in dendro.merges]
    assert max(heights[:-1]) < heights[-1] / 100
    labels = cluster.cut_k(dendro, 2)
    assert labels.tolist() == [0, 0, 1, 1]


def test_two_leaves():
    d = np.array([[0.0, 3.0], [3.0, 0.0]])
    dendro = cluster.agglomerate(d, "average")
    assert len(dendro.merges) == 1
    assert dendro.merges[0][2] == 3.0


def test_ward_requires_euclidean():
    d = np.array([[0.0, 0.5], [0.5, 0.0]])
    with pytest.raises(cluster.ClusteringError):
        cluster.agglomerate(d, "ward", metric="cosine")


@pytest.mark.parametrize("link", ["single", "complete", "average", "ward"])
def test_matches_scipy_linkage(link):
    rng = np.random.default_rng(3)
    points = rng.normal(size=(12, 4))
    d = cluster.distance_matrix(points, "euclidean")
    ours = cluster.agglomerate(d, link)
    reference = scipy_linkage(squareform(d, checks=False), method=link)
    for (a, b, h, _), row in zip(ours.merges, reference):
        assert {a, b} == {int(row[0]), int(row[1])}
        assert h == pytest.approx(row[2], rel=1e-9)


@pytest.mark.parametrize("link", ["complete", "average", "ward"])
def test_monotone_heights(link):
    rng = np.random.default_rng(4)
    points = rng.normal(size=(15, 6))
    d = cluster.distance_matrix(points, "euclidean")
    dendro = cluster.agglomerate(d, link)
    heights = [m[2] for m in dendro.merges]
    assert all(heights[i] <= heights[i + 1] + 1e-12 for i in range(len(heights) - 1))


def test_deterministic_tie_break():
    # four equidistant points: the first merge must be (0, 1)
    d = np.ones((4, 4)) - np.eye(4)
    dendro = cluster.agglomerate(d, "single")
    assert dendro.merges[0][:2] == (0, 1)


# ---------------------------------------------------------------------------
# cutting and silhouette
# ---------------------------------------------------------------------------

def test_cut_extremes():
    rng = np.random.default_rng(5)
    points = rng.normal(size=(6, 3))
    d = cluster.distance_matrix(points, "euclidean")
    dendro = cluster.agglomerate(d, "average")
    assert cluster.cut_k(dendro, 6).tolist() == list(range(6))
    assert np.all(cluster.cut_k(dendro, 1) == 0)
    with pytest.raises(cluster.ClusteringError):
        cluster.cut_k(dendro, 0)
    with pytest.raises(cluster.ClusteringError):
        cluster.cut_k(dendro, 7)


def test_silhouette_hand_oracle():
    # two tight pairs: a = intra distance, b = mean distance to other pair
    d = np.array(
        [
            [0.0, 1.0, 100.0, 101.0],
            [1.0, 0.0, 99.0, 100.0],
            [100.0, 99.0, 0.0, 1.0],
            [101.0, 100.0, 1.0, 0.0],
        ]
    )
    labels = np.array([0, 0, 1, 1])
    expected = np.mean(
        [
            (100.5 - 1.0) / 100.5,
            (99.5 - 1.0) / 99.5,
            (99.5 - 1.0) / 99.5,
            (100.5 - 1.0) / 100.5,
        ]
    )
    assert cluster.silhouette(labels, d) == pytest.approx(expected, abs=1e-12)
    assert cluster.silhouette(labels, d) > 0.9


def test_silhouette_identical_distances_and_singletons():
    d = np.ones((4, 4)) - np.eye(4)
    assert cluster.silhouette(np.array([0, 0, 1, 1]), d) == 0.0
    # singleton clusters contribute zero
    labels = np.array([0, 1, 2, 2])
    value = cluster.silhouette(labels, d)
    assert value == 0.0
    with pytest.raises(cluster.ClusteringError):
        cluster.silhouette(np.zeros(4, dtype=int), d)


def test_silhouette_matches_sklearn():
    rng = np.random.default_rng(6)
    points = rng.normal(size=(20, 5))
    d = cluster.distance_matrix(points, "euclidean")
    dendro = cluster.agglomerate(d, "average")
    for k in (2, 3, 5):
        labels = cluster.cut_k(dendro, k)
        ours = cluster.silhouette(labels, d)
        ref = silhouette_score(d, labels, metric="precomputed")
        assert ours == pytest.approx(ref, abs=1e-12)
        assert -1.0 <= ours <= 1.0


def test_label_permutation_stability():
    rng = np.random.default_rng(7)
    points = rng.normal(size=(10, 4))
    perm = rng.permutation(10)
    d1 = cluster.distance_matrix(points, "euclidean")
    d2 = cluster.distance_matrix(points[perm], "euclidean")
    l1 = cluster.cut_k(cluster.agglomerate(d1, "complete"), 3)
    l2 = cluster.cut_k(cluster.agglomerate(d2, "complete"), 3)
    # same partition as a set family: map the permuted labels back
    l2_orig = np.empty_like(l2)
    l2_orig[perm] = l2
    assert adjusted_rand_score(l1, l2_orig) == pytest.approx(1.0)
    parts1 = {frozenset(np.where(l1 == c)[0]) for c in np.unique(l1)}
    parts2 = {frozenset(perm[np.where(l2 == c)[0]]) for c in np.unique(l2)}
    assert parts1 == parts2


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

def test_grid_search_recovers_planted_clusters():
    rng = np.random.default_rng(8)
    vectors, truth = planted_vectors(rng, k=3, per_cluster=5)
    report = cluster.grid_search(vectors, range(2, 8))
    assert report.best_k == 3
    assert report.best_score >= 0.8
    labels = np.array([report.labels[str(i)] for i in range(len(truth))])
    assert adjusted_rand_score(truth, labels) == pytest.approx(1.0)


def test_grid_search_cell_accounting():
    rng = np.random.default_rng(9)
    vectors, _ = planted_vectors(rng, k=2, per_cluster=4)
    report = cluster.grid_search(vectors, range(2, 5))
    assert len(report.grid) == 3 * 2 * 4
    invalid = [cell for cell in report.grid if not cell["valid"]]
    assert all(c["metric"] == "cosine" and c["linkage"] == "ward" for c in invalid)
    assert len(invalid) == 3
    scores = [c["score"] for c in report.grid if c["valid"]]
    assert all(-1.0 <= s <= 1.0 for s in scores)


def test_grid_search_k_bounds():
    rng = np.random.default_rng(10)
    vectors, _ = planted_vectors(rng, k=2, per_cluster=2)
    with pytest.raises(cluster.ClusteringError):
        cluster.grid_search(vectors, range(2, 10))
    with pytest.raises(cluster.ClusteringError):
        cluster.grid_search(vectors, [])


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def test_dendrogram_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    points = rng.normal(size=(6, 3))
    d = cluster.distance_matrix(points, "cosine")
    dendro = cluster.agglomerate(d, "complete", metric="cosine")
    names = [f"f{i}" for i in range(6)]
    path = tmp_path / "dendro.csv"
    cluster.write_dendrogram(dendro, names, path)
    back, leaf_names = cluster.read_dendrogram(path)
    assert back == dendro
    assert leaf_names == names
