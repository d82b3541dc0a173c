import numpy as np
import pytest

from ratecast.dataio import generate_synthetic
from ratecast.factorization import TrainConfig, init_model, train
from ratecast.ratings import thresholds_by_percentile
from ratecast.simulator import SimConfig, Simulation, default_k, probed_entries, run_simulation, select_neighbors


def small_world(n=40, seed=0, metric="rtt"):
    m = generate_synthetic(n, 3, (10.0, 500.0), 5.0, metric, seed=seed)
    return m, thresholds_by_percentile(m)


class TestNeighbors:
    def test_two_nodes(self):
        nb = select_neighbors(2, 1, np.random.default_rng(0))
        assert nb.tolist() == [[1], [0]]

    def test_no_self_no_repeats(self):
        nb = select_neighbors(50, 10, np.random.default_rng(1))
        for i, row in enumerate(nb):
            assert i not in row and len(set(row)) == 10

    def test_deterministic(self):
        a = select_neighbors(30, 5, np.random.default_rng(2))
        b = select_neighbors(30, 5, np.random.default_rng(2))
        assert np.array_equal(a, b)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            select_neighbors(5, 5, np.random.default_rng(0))

    def test_large_network_fraction(self):
        n, k = 2500, 32
        rows, _ = probed_entries(select_neighbors(n, k, np.random.default_rng(3)))
        assert rows.size / (n * (n - 1)) == pytest.approx(32 / 2499)
        assert round(100 * rows.size / (n * (n - 1)), 2) == 1.28

    def test_bidirectional_fraction_band(self):
        n, k = 200, 10
        rows, _ = probed_entries(select_neighbors(n, k, np.random.default_rng(4)), bidirectional=True)
        frac = rows.size / (n * (n - 1))
        # both directions per edge, minus edges picked from both ends
        assert 2 * k / (n - 1) * 0.9 <= frac <= 2 * k / (n - 1)

    def test_default_k(self):
        assert default_k(2500) == 32 and default_k(226) == 10


class TestSimulation:
    def test_zero_rounds_is_initialization(self):
        m, scale = small_world()
        cfg = TrainConfig(rank=4, seed=5)
        result = run_simulation(m, scale, SimConfig(k=5, rounds=0, train=cfg))
        init = init_model("rmf", m.n, cfg, np.random.default_rng(5))
        assert np.array_equal(result.model.U, init.U) and np.array_equal(result.model.V, init.V)

    @pytest.mark.parametrize("bidirectional,factor", [(False, 1), (True, 2)])
    def test_exchange_count(self, bidirectional, factor):
        m, scale = small_world()
        result = run_simulation(m, scale, SimConfig(k=6, rounds=2, bidirectional=bidirectional))
        assert result.exchanges_per_round == factor * m.n * 6
        assert all(len(o) == factor * m.n * 6 for o in result.orders)
        assert result.messages_per_round == 2 * result.exchanges_per_round

    def test_observed_fraction(self):
        m, scale = small_world(n=100)
        result = run_simulation(m, scale, SimConfig(k=10, rounds=1))
        assert result.observed_fraction == pytest.approx(10 / 99)

    @pytest.mark.parametrize("kind", ["rmf", "mmmf", "nmf"])
    @pytest.mark.parametrize("bidirectional", [False, True])
    def test_equivalent_to_centralized(self, kind, bidirectional):
        m, scale = small_world(seed=1)
        cfg = TrainConfig(rank=4, seed=3, learn_theta=kind != "mmmf")
        sim = SimConfig(k=5, rounds=4, train=cfg, seed=2, bidirectional=bidirectional)
        result = run_simulation(m, scale, sim, kind, keep_access_log=True)
        central = train(kind, result.probed, cfg, orders=result.orders).model
        assert np.array_equal(result.model.U, central.U)
        assert np.array_equal(result.model.V, central.V)
        assert result.access.violations == 0 and result.access.reads > 0

    def test_access_log_flags_strangers(self):
        m, scale = small_world()
        s = Simulation("rmf", m, scale, SimConfig(k=2, rounds=0))
        stranger = next(j for j in range(m.n) if j != 0 and j not in s.access.contacts[0])
        s._exchange(0, stranger, 3.0)
        assert s.access.nonlocal_reads == 2

    def test_mmmf_needs_fixed_thresholds(self):
        m, scale = small_world()
        with pytest.raises(ValueError):
            Simulation("mmmf", m, scale, SimConfig(k=3))

    def test_report_lines(self):
        m, scale = small_world()
        text = run_simulation(m, scale, SimConfig(k=4, rounds=2)).report()
        keys = [line.split("=", 1)[0] for line in text.splitlines()]
        assert "messages_per_round" in keys and "final_rmse" in keys and "locality_violations" in keys

    def test_planted_rank_five_k32(self):
        m = generate_synthetic(200, 5, (10.0, 500.0), 24.5, seed=0)
        result = run_simulation(m, thresholds_by_percentile(m), SimConfig(k=32, rounds=30))
        assert len(result.rmse_trajectory) == 30
        assert result.rmse_trajectory[-1] < 1.0
