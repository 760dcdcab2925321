"""Tests for the Gaussian-Bernoulli RBM."""

import math

import numpy as np
import pytest
from scipy import integrate, special

from mdrbm_bench import gbrbm
from mdrbm_bench.config import AdamConfig, GbrbmConfig
from mdrbm_bench.core_math import RngStream
from mdrbm_bench.errors import CapabilityError, UsageError
from mdrbm_bench.gbrbm import GbrbmParams


def small_params(seed: int = 0, n: int = 1, width: int = 2) -> GbrbmParams:
    gen = np.random.default_rng(seed)
    return GbrbmParams(
        b0=gen.normal(0, 0.5, width),
        w0=gen.normal(0, 0.5, (width, n)),
        c=gen.normal(0, 0.5, n),
        s=gen.normal(0, 0.3, n),
    )


def negative_energy(params: GbrbmParams, z: np.ndarray, x: np.ndarray) -> float:
    """-E(z, x) written out term by term."""
    return float(
        -np.sum(x * x / (2.0 * np.exp(params.s))) + params.c @ x + params.b0 @ z + z @ (params.w0 @ x)
    )


def two_blobs(N: int = 200, seed: int = 0) -> np.ndarray:
    gen = np.random.default_rng(seed)
    centres = np.where((np.arange(N) % 2)[:, None] == 0, -2.0, 2.0)
    return centres + gen.normal(0, 0.5, (N, 2))


def finite_difference_gradient(params: GbrbmParams, X: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the mean exact log-likelihood, flattened in ``as_dict`` order."""
    blocks = params.as_dict()
    grads = []
    for name, value in blocks.items():
        for index in np.ndindex(value.shape):
            shifted = []
            for step in (h, -h):
                moved = {k: v.copy() for k, v in blocks.items()}
                moved[name][index] += step
                shifted.append(gbrbm.exact_log_likelihood(GbrbmParams.from_dict(moved), X))
            grads.append((shifted[0] - shifted[1]) / (2.0 * h))
    return np.array(grads)


def flatten(params: GbrbmParams) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.as_dict().values()])


class TestConditionals:
    """Tests for the two conditionals."""

    def test_hidden_ignores_visible_parameters(self):
        """Test P(z | x) does not depend on c or s."""
        params = small_params(n=3, width=4)
        shifted = GbrbmParams(b0=params.b0, w0=params.w0, c=params.c + 5.0, s=params.s - 1.0)
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(gbrbm.hidden_conditional(params, x), gbrbm.hidden_conditional(shifted, x))

    def test_hidden_is_pelm_law(self):
        """Test P(z_j = +1 | x) = expit(2 u_j)."""
        params = small_params(n=2, width=3)
        x = np.array([1.0, -0.5])
        expected = special.expit(2.0 * (params.b0 + params.w0 @ x))
        np.testing.assert_allclose(gbrbm.hidden_conditional(params, x), expected, rtol=1e-14)

    def test_visible_moments(self):
        """Test x | z has mean sigma^2 (c + w0^T z) and variance sigma^2."""
        params = GbrbmParams(
            b0=np.zeros(2), w0=np.array([[1.0, 0.0], [0.5, -1.0]]), c=np.array([0.2, 0.0]), s=np.log([2.0, 0.5])
        )
        mean, variance = gbrbm.visible_conditional(params, [1.0, -1.0])
        np.testing.assert_allclose(mean, [2.0 * (0.2 + 1.0 - 0.5), 0.5 * (0.0 + 0.0 + 1.0)])
        np.testing.assert_allclose(variance, [2.0, 0.5])

    def test_visible_rejects_non_spins(self):
        """Test hidden configurations outside {-1, +1}."""
        with pytest.raises(UsageError, match="-1 and \\+1"):
            gbrbm.visible_conditional(small_params(), [0.0, 1.0])


class TestExactQuantities:
    """Tests for the enumerated partition function and likelihood."""

    def test_log_partition_by_quadrature(self):
        """Test ln Z against numerical integration over x for n = 1."""
        for seed in range(3):
            params = small_params(seed)
            configurations = [np.array([a, b]) for a in (-1.0, 1.0) for b in (-1.0, 1.0)]

            def density(x: float) -> float:
                return sum(math.exp(negative_energy(params, z, np.array([x]))) for z in configurations)

            Z, _ = integrate.quad(density, -np.inf, np.inf)
            assert gbrbm.log_partition(params) == pytest.approx(math.log(Z), abs=1e-7)

    def test_density_normalized(self):
        """Test exp(ln G(x)) integrates to one."""
        params = small_params(seed=4)
        total, _ = integrate.quad(lambda x: math.exp(gbrbm.exact_log_likelihood(params, [[x]])), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-7)

    def test_too_wide(self):
        """Test the enumeration limit."""
        params = GbrbmParams(b0=np.zeros(13), w0=np.zeros((13, 1)), c=np.zeros(1), s=np.zeros(1))
        with pytest.raises(CapabilityError, match="width"):
            gbrbm.log_partition(params)

    def test_hidden_permutation_invariance(self):
        """Test relabeling the hidden units leaves the likelihood unchanged."""
        params = small_params(seed=6, n=2, width=4)
        order = [2, 0, 3, 1]
        permuted = GbrbmParams(b0=params.b0[order], w0=params.w0[order], c=params.c, s=params.s)
        X = two_blobs(50)
        assert gbrbm.exact_log_likelihood(permuted, X) == pytest.approx(
            gbrbm.exact_log_likelihood(params, X), rel=1e-12
        )
        assert gbrbm.log_partition(permuted) == pytest.approx(gbrbm.log_partition(params), rel=1e-12)

    def test_sample_model_moments(self):
        """Test ancestral samples of a decoupled model are N(sigma^2 c, sigma^2)."""
        params = GbrbmParams(b0=np.array([0.3]), w0=np.zeros((1, 2)), c=np.array([1.0, -0.5]), s=np.log([0.5, 2.0]))
        samples = gbrbm.sample_model(params, 100_000, RngStream(0))
        expected_mean = np.array([0.5, -1.0])
        standard_error = np.sqrt(np.array([0.5, 2.0]) / 100_000)
        assert np.all(np.abs(samples.mean(axis=0) - expected_mean) <= 4.0 * standard_error)
        np.testing.assert_allclose(samples.var(axis=0), [0.5, 2.0], rtol=0.03)


class TestContrastiveDivergence:
    """Tests for CD-k gradient estimates."""

    def test_long_chain_matches_exact_gradient(self):
        """Test long-chain CD on a large batch points along the exact likelihood gradient."""
        positive, agreeing, total = 0, 0, 0
        for seed in range(20):
            params = small_params(seed, n=2, width=3)
            X = two_blobs(4000, seed) + np.array([0.5, -0.3])
            estimate = flatten(gbrbm.cd_update(params, X, 50, RngStream(seed)))
            exact = finite_difference_gradient(params, X)
            positive += int(estimate @ exact > 0)
            agreeing += int(np.sum(np.sign(estimate) == np.sign(exact)))
            total += exact.size
        assert positive >= 19
        assert agreeing / total >= 0.8

    def test_model_samples_give_near_zero_gradient(self):
        """Test batches drawn from the model itself, with the norm shrinking as the batch grows."""
        params = small_params(seed=5, n=2, width=3)
        norms = []
        for N in (1_000, 100_000):
            X = gbrbm.sample_model(params, N, RngStream(1).substream(N))
            norms.append(np.linalg.norm(flatten(gbrbm.cd_update(params, X, 1, RngStream(2)))))
        assert norms[1] < norms[0] / 3.0
        assert norms[1] < 0.05

    def test_cd_update_deterministic(self):
        """Test identical streams give identical gradient estimates."""
        params = small_params(n=2, width=3)
        a = gbrbm.cd_update(params, two_blobs(10), 2, RngStream(3))
        b = gbrbm.cd_update(params, two_blobs(10), 2, RngStream(3))
        np.testing.assert_array_equal(a.w0, b.w0)

    def test_cd_update_zero_steps(self):
        """Test k = 0 is rejected."""
        with pytest.raises(UsageError, match="at least one Gibbs step"):
            gbrbm.cd_update(small_params(), np.zeros((2, 1)), 0, RngStream(0))

    def test_cd_update_empty_batch(self):
        """Test an empty batch is rejected."""
        with pytest.raises(UsageError, match="empty batch"):
            gbrbm.cd_update(small_params(), np.zeros((0, 1)), 1, RngStream(0))

    def test_wrong_width_inputs(self):
        """Test inputs of the wrong width."""
        with pytest.raises(UsageError, match="features"):
            gbrbm.reconstruction_error(small_params(), np.zeros((2, 3)))


class TestTrain:
    """Tests for GBRBM pretraining."""

    def config(self, epochs: int) -> GbrbmConfig:
        return GbrbmConfig(epochs=epochs, batch_size=20, optimizer=AdamConfig(learning_rate=0.01))

    def test_likelihood_improves_over_fifty_epochs(self):
        """Test the exact log-likelihood on a two-component mixture rises above its start and keeps climbing."""
        X = two_blobs()
        initial = GbrbmParams.initialize(2, 2, RngStream(0))
        start = gbrbm.exact_log_likelihood(initial, X)
        result = gbrbm.train(initial, X, self.config(50), RngStream(1))
        objectives = [record.objective for record in result.history]
        assert len(objectives) == 50
        assert all(value > start for value in objectives)
        assert objectives[-1] > objectives[0]
        assert objectives[-1] == pytest.approx(gbrbm.exact_log_likelihood(result.params, X), rel=1e-12)
        assert result.objective_name == "log_likelihood"
        assert len(result.reconstruction_errors) == 50

    def test_zero_epochs(self):
        """Test zero epochs returns the initial parameters."""
        initial = GbrbmParams.initialize(2, 3, RngStream(0))
        result = gbrbm.train(initial, two_blobs(40), self.config(0), RngStream(1))
        for name, value in initial.as_dict().items():
            np.testing.assert_array_equal(result.params.as_dict()[name], value)
        assert result.history == []
        assert result.reconstruction_errors == []

    def test_seed_determinism(self):
        """Test identical seeds train identical parameters and other seeds do not."""
        initial = GbrbmParams.initialize(2, 3, RngStream(0))
        X = two_blobs(60)
        a = gbrbm.train(initial, X, self.config(3), RngStream(4))
        b = gbrbm.train(initial, X, self.config(3), RngStream(4))
        c = gbrbm.train(initial, X, self.config(3), RngStream(5))
        for name in ("b0", "w0", "c", "s"):
            np.testing.assert_array_equal(a.params.as_dict()[name], b.params.as_dict()[name])
        assert not np.array_equal(a.params.w0, c.params.w0)


def test_export_pelm():
    """The exported layer keeps b0 and w0, is frozen and records its provenance."""
    params = small_params(n=2, width=3)
    theta0 = gbrbm.export_pelm(params, source="gbrbm:abc:seed=1")
    np.testing.assert_array_equal(theta0.b0, params.b0)
    np.testing.assert_array_equal(theta0.w0, params.w0)
    assert theta0.frozen
    assert theta0.provenance == "gbrbm"
    assert theta0.source == "gbrbm:abc:seed=1"
