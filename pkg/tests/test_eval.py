import numpy as np
import pytest
from numpy.testing import assert_allclose

from jointpred import evaluation as ev
from jointpred.copulas import CopulaModel, UnsupportedError, sample_copula
from jointpred.data import Dataset, split
from jointpred.pipeline import FitConfig, conditional_means, demargin, fit_joint, remargin, sample_dependence, with_dependence

from conftest import make_additive

FAST = FitConfig(n_trees=60, epochs=40, architecture="1x30")
CLAYTON2 = CopulaModel("clayton", 2, {"theta": 2.0})


@pytest.fixture(scope="module")
def model():
    return fit_joint(make_additive(), "forest", "gmmn", FAST)


@pytest.fixture(scope="module")
def test_set():
    return make_additive(n=60, seed=5)


# -- empirical copula -----------------------------------------------------------

def test_empirical_copula_hand_count():
    U = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert ev.empirical_copula_value(U, [0.5, 0.9]) == 0.5
    assert ev.empirical_copula_value(U, [1.0, 1.0]) == 1.0
    assert ev.empirical_copula_value(U, [0.1, 0.1]) == 0.0
    assert_allclose(ev.empirical_copula_value(U, [[0.5, 0.9], [0.7, 0.9]]), [0.5, 1.0])


# -- two-sample CvM integral --------------------------------------------------------

def mc_integral(A, B, n_pts, rng):
    vals = []
    for _ in range(n_pts // 100_000):
        u = rng.uniform(size=(100_000, A.shape[1]))
        vals.append((ev.empirical_copula_value(A, u) - ev.empirical_copula_value(B, u)) ** 2)
    v = np.concatenate(vals)
    return v.mean(), v.std(ddof=1) / np.sqrt(v.size)


def test_single_point_example_exact():
    assert ev.cvm_integral_two_sample([[0.25, 0.25]], [[0.75, 0.75]]) == 0.5


def test_single_point_example_grid():
    t = (np.arange(2000) + 0.5) / 2000
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    c1 = (g1 >= 0.25) & (g2 >= 0.25)
    c2 = (g1 >= 0.75) & (g2 >= 0.75)
    assert_allclose(np.mean((c1.astype(float) - c2) ** 2), 0.5, atol=1e-12)


def test_identical_and_symmetric():
    rng = np.random.default_rng(0)
    A, B = rng.uniform(size=(20, 3)), rng.uniform(size=(13, 3))
    assert ev.cvm_integral_two_sample(A, A) == 0.0
    assert_allclose(ev.cvm_integral_two_sample(A, B), ev.cvm_integral_two_sample(B, A), rtol=1e-13)
    # duplicated rows give the same empirical copula
    assert ev.cvm_integral_two_sample(A, np.vstack([A, A])) < 1e-15
    with pytest.raises(ValueError):
        ev.cvm_integral_two_sample(A, B[:, :2])


@pytest.mark.parametrize("seed", range(3))
def test_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    n1, n2, d = rng.integers(1, 30), rng.integers(1, 30), rng.integers(1, 4)
    A, B = rng.uniform(size=(n1, d)), rng.uniform(size=(n2, d))
    est, se = mc_integral(A, B, 300_000, rng)
    assert abs(ev.cvm_integral_two_sample(A, B) - est) <= 3 * se + 1e-12


# -- ACvM / AMSE ----------------------------------------------------------------

def test_acvm_forced_zero(model, test_set, monkeypatch):
    U_tst = demargin(model, test_set)
    monkeypatch.setattr(ev, "sample_dependence", lambda m, n, g: U_tst)
    assert ev.acvm(model, test_set, n_rep=3, n_gen=60, rng=0) == 0.0


def test_acvm_prefactor_recomputation(model, test_set, monkeypatch):
    U_gen = np.random.default_rng(1).uniform(size=(40, 2))
    raw = ev.cvm_integral_two_sample(demargin(model, test_set), U_gen)
    monkeypatch.setattr(ev, "sample_dependence", lambda m, n, g: np.tile(U_gen, (n // 40, 1)))
    a40 = ev.acvm(model, test_set, n_rep=2, n_gen=40, rng=0)
    a80 = ev.acvm(model, test_set, n_rep=2, n_gen=80, rng=0)
    assert_allclose(a40, raw / np.sqrt(1 / 60 + 1 / 40), rtol=1e-12)
    assert_allclose(a80 / a40, np.sqrt(1 / 60 + 1 / 40) / np.sqrt(1 / 60 + 1 / 80), rtol=1e-10)


def test_acvm_properties(model, test_set):
    reps = ev.acvm_replications(model, test_set, n_rep=4, n_gen=100, rng=3)
    assert len(reps) == 4 and min(reps) >= 0
    assert_allclose(ev.acvm(model, test_set, 4, 100, 3), np.mean(reps))
    assert reps == ev.acvm_replications(model, test_set, 4, 100, 3)
    with pytest.raises(ValueError):
        ev.acvm(model, Dataset(test_set.covariates[:1], test_set.responses[:1], ("a", "b"), ("x", "y")))


def test_amse_degenerate_zero(model, monkeypatch):
    X0 = np.array([1.5, -0.5])
    test = Dataset(np.full((4, 2), 0.5), np.tile(X0, (4, 1)), ("a", "b"), ("x", "y"))
    monkeypatch.setattr(ev, "remargin", lambda m, U, z, means=None: np.tile(X0, (len(U), 1)))
    assert ev.amse(model, test, n_gen=10, rng=0) == 0.0


def test_amse_matches_direct_formula_and_shift(model, test_set, monkeypatch):
    n_gen, c = 30, 0.7
    means = conditional_means(model, test_set.covariates)
    streams = np.random.default_rng(4).spawn(test_set.n)
    draws = [remargin(model, sample_dependence(model, n_gen, g), test_set.covariates[k], means[k])
             for k, g in enumerate(streams)]
    X = test_set.responses

    def direct(shift):
        return np.mean([np.mean(np.sum((D + shift - X[k]) ** 2, axis=1)) for k, D in enumerate(draws)])

    base = ev.amse(model, test_set, n_gen, rng=4)
    assert_allclose(base, direct(0.0), rtol=1e-12)
    real = ev.remargin
    monkeypatch.setattr(ev, "remargin", lambda *a, **k: real(*a, **k) + c)
    shifted = ev.amse(model, test_set, n_gen, rng=4)
    cross = 2 * c * np.mean([np.mean(np.sum(D - X[k], axis=1)) for k, D in enumerate(draws)])
    assert_allclose(shifted, direct(c), rtol=1e-12)
    assert_allclose(shifted - base, 2 * c**2 + cross, rtol=1e-9, atol=1e-12)


def test_evaluate_report(model, test_set):
    r = ev.evaluate(model, test_set, n_rep=3, n_gen=50, rng=8)
    assert r.label == model.label and r.n_tst == 60 and r.seed == 8
    assert r.acvm >= 0 and r.amse >= 0 and len(r.acvm_replications) == 3
    assert r == ev.evaluate(model, test_set, n_rep=3, n_gen=50, rng=8)


def test_height_weight_proxy_ordering(height_weight):
    # synthetic stand-in for the real table; direction only
    train, test = split(height_weight, 100, 271)
    net = fit_joint(train, "forest", "gmmn", FitConfig(epochs=300))
    ind = with_dependence(net, "independence")
    a_net = ev.acvm(net, test, n_rep=10, n_gen=500, rng=1)
    a_ind = ev.acvm(ind, test, n_rep=10, n_gen=500, rng=1)
    assert a_net < a_ind


# -- one-sample CvM --------------------------------------------------------------

def test_one_sample_permutation_invariant():
    U = sample_copula(CLAYTON2, 300, np.random.default_rng(0))
    perm = np.random.default_rng(1).permutation(300)
    assert_allclose(ev.cvm_one_sample(U, CLAYTON2), ev.cvm_one_sample(U[perm], CLAYTON2), rtol=1e-12)


@pytest.mark.parametrize("n", [50, 200, 1000])
def test_one_sample_d1_only_rank_scale_offset(n):
    # in one dimension C_n(P_k) = k/n and C(P_k) = k/(n+1) whatever the data
    U = np.random.default_rng(n).uniform(size=(n, 1))
    k = np.arange(1, n + 1)
    expected = np.sum((k / n - k / (n + 1)) ** 2)
    got = ev.cvm_one_sample(U, CopulaModel("independence", 1, {}))
    assert_allclose(got, expected, rtol=1e-10)
    assert got < 1 / n


def test_one_sample_power_against_null():
    rng = np.random.default_rng(3)
    null = [ev.cvm_one_sample(sample_copula(CLAYTON2, 1000, rng), CLAYTON2) for _ in range(100)]
    stat = ev.cvm_one_sample(rng.uniform(size=(1000, 2)), CLAYTON2)
    assert stat > np.quantile(null, 0.95)


def test_one_sample_pinned():
    U = sample_copula(CLAYTON2, 1000, np.random.default_rng(271))
    assert_allclose(ev.cvm_one_sample(U, CLAYTON2), PINNED_CLAYTON, rtol=1e-10)


PINNED_CLAYTON = 0.01894182660622854  # regression pin, same order as the null draws


def test_one_sample_mc_truth_has_se():
    P = np.full((3, 3), 0.7)
    np.fill_diagonal(P, 1)
    truth = CopulaModel("student_t", 3, {"P": P, "nu": 4.0})
    U = sample_copula(truth, 200, np.random.default_rng(0))
    val, se = ev.cvm_one_sample_with_se(U, truth, rng=1, n_mc=20_000)
    assert val > 0 and se > 0
    with pytest.raises(ValueError):
        ev.cvm_one_sample(U[:, :2], truth)


# -- benchmark --------------------------------------------------------------------

def test_benchmark_config_validation():
    with pytest.raises(UnsupportedError):
        ev.BenchmarkConfig(family="gumbel")
    with pytest.raises(ValueError):
        ev.BenchmarkConfig(dim=1)
    with pytest.raises(ValueError):
        ev.BenchmarkConfig(tau=1.2)
    t = ev.benchmark_truth(ev.BenchmarkConfig(family="t4", dim=10))
    assert t.params["nu"] == 4.0
    assert_allclose(t.params["P"][0, 1], np.sin(np.pi / 4))


def test_small_benchmark_rows(tmp_path):
    cfg = ev.BenchmarkConfig(n_trn=300, architectures=("1x20", "2x10"), epochs=5, batch_size=None,
                             reps=3, n_gen=100, references=True)
    rows = ev.benchmark_copula_learning(cfg)
    labels = [r["architecture"] for r in rows]
    assert labels.count("G1x20") == 3 and labels.count("G2x10") == 3
    assert labels.count("untrained-G1x20") == 3 and labels.count("independence") == 3
    assert all(r["cvm"] >= 0 and r["se"] == 0 for r in rows)
    assert rows == ev.benchmark_copula_learning(cfg)
    p = tmp_path / "b.csv"
    ev.write_benchmark_csv(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "architecture,replication,cvm,se,tau" and len(lines) == 1 + len(rows)


def test_report_writers(model, test_set, tmp_path):
    r1 = ev.evaluate(model, test_set, 2, 30, rng=0)
    r2 = ev.evaluate(with_dependence(model, "independence"), test_set, 2, 30, rng=0)
    ev.write_report_csv([r1, r2], tmp_path / "r.csv")
    ev.write_plot_csv([r1, r2], tmp_path / "p.csv")
    rep = (tmp_path / "r.csv").read_text().splitlines()
    assert rep[0] == "model,metric,value,replication,seed" and len(rep) == 1 + 2 * 4
    plot = (tmp_path / "p.csv").read_text().splitlines()
    assert plot[0] == "model,acvm,amse,n_rep,n_gen,n_tst"
    assert [l.split(",")[0] for l in plot[1:]] == ["forest+G1x30", "forest+independence"]
