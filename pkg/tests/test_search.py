import itertools

import numpy as np
import pytest

from jamcodec import nn, search
from jamcodec.errors import EmptySearchSpaceError, InvalidSpecError

SPECTRAL_SPACE = search.SearchSpace(input_dim=128)


def brute_force_shapes(widths, depth):
    """All non-increasing width tuples, enumerated independently."""
    return [c for c in itertools.product(sorted(widths), repeat=depth)
            if all(a >= b for a, b in zip(c, c[1:]))]


class TestEnumerate:
    def test_spectral_grid_is_128(self):
        assert len(search.enumerate_archs(SPECTRAL_SPACE)) == 128

    def test_shape_counts_brute_force(self):
        shapes2 = brute_force_shapes((32, 64, 128), 2)
        shapes3 = brute_force_shapes((32, 64, 128), 3)
        assert len(shapes2) == 6 and len(shapes3) == 10
        # every latent in 3..10 is below every allowed last width
        assert (len(shapes2) + len(shapes3)) * 8 == 128

    def test_matches_brute_force_product(self):
        archs = search.enumerate_archs(SPECTRAL_SPACE)
        expect = set()
        for depth in (2, 3):
            for shape in brute_force_shapes((32, 64, 128), depth):
                for latent in range(3, 11):
                    if latent < shape[-1]:
                        expect.add((shape, latent))
        assert {(a.hidden, a.latent_dim) for a in archs} == expect

    def test_increasing_widths_excluded(self):
        with pytest.raises(InvalidSpecError):
            search.ArchSpec(128, (64, 128), 4)
        assert all(a.hidden != (64, 128) for a in search.enumerate_archs(SPECTRAL_SPACE))

    def test_duplicate_free_and_ordered(self):
        archs = search.enumerate_archs(SPECTRAL_SPACE)
        keys = [(len(a.hidden), a.hidden, a.latent_dim) for a in archs]
        assert len(set(keys)) == len(keys)
        assert keys == sorted(keys)

    def test_latent_below_last_width(self):
        space = search.SearchSpace(input_dim=64, widths=(8,), depths=(2,),
                                   latents=(3, 7, 8, 9))
        archs = search.enumerate_archs(space)
        assert {a.latent_dim for a in archs} == {3, 7}

    def test_empty_space_rejected(self):
        space = search.SearchSpace(input_dim=64, widths=(8,), depths=(2,), latents=(9,))
        with pytest.raises(EmptySearchSpaceError):
            search.enumerate_archs(space)


class TestCostProfile:
    def test_dense_layer_hand_count(self):
        assert search.dense_cost(2, 3) == (9, 6)

    def test_paper_mixed_arch(self):
        cost = search.count_params_ops(search.ArchSpec(177, (128, 128), 6))
        assert 79_000 <= cost.n_params <= 81_000

    def test_paper_spectral_arch(self):
        cost = search.count_params_ops(search.ArchSpec(128, (128, 128), 4))
        assert 66_500 <= cost.n_params <= 69_500

    def test_paper_temporal_arch(self):
        cost = search.count_params_ops(search.ArchSpec(49, (64, 64), 3))
        assert 14_000 <= cost.n_params <= 16_000

    def test_matches_instantiated_tensors_for_whole_grid(self):
        for arch in search.enumerate_archs(SPECTRAL_SPACE):
            model = nn.build_autoencoder(arch.input_dim, arch.hidden, arch.latent_dim, seed=0)
            assert search.count_params_ops(arch).n_params == model.n_params()

    def test_macs_hand_count(self):
        # 4 -> 3 -> 2 and mirror: 12 + 6 + 6 + 12 = 36 MACs
        cost = search.count_params_ops(search.ArchSpec(4, (3,), 2))
        assert cost.n_macs == 36
        assert cost.n_flops == 72

    def test_int8_memory_near_param_count(self):
        arch = search.ArchSpec(128, (128, 128), 4)
        cost = search.count_params_ops(arch)
        assert cost.n_params <= cost.memory_bytes_int8 <= cost.n_params + 8 * 10

    def test_conv_front_counted(self):
        arch = search.ArchSpec(64, (16,), 4, conv_front=((2, 4, 3, 2),))
        model = nn.build_autoencoder(arch.input_dim, arch.hidden, arch.latent_dim,
                                     seed=0, conv_front=arch.conv_front)
        assert search.count_params_ops(arch).n_params == model.n_params()


def low_rank_data(n, d=12, rank=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (n, rank)) @ rng.standard_normal((rank, d))


def tiny_budget(seed=0, screen=8):
    return nn.TrainBudget(screen_epochs=screen, retrain_epochs_max=40,
                          early_stop_patience=6, batch_size=16, seed=seed, lr=3e-3)


class TestScreen:
    def test_bigger_arch_wins_on_low_rank_data(self):
        X = low_rank_data(120)
        small = search.ArchSpec(12, (4,), 3)
        large = search.ArchSpec(12, (10, 8), 3)
        wins = ties = 0
        for seed in range(5):
            ranked = search.screen([small, large], X[:90], X[90:], tiny_budget(seed))
            gap = abs(ranked[0].val_mse - ranked[1].val_mse)
            if ranked[0].arch == large:
                wins += 1
            elif gap < 0.1 * max(r.val_mse for r in ranked):
                ties += 1
        assert wins + ties == 5 and wins >= 3

    def test_singleton(self):
        X = low_rank_data(60)
        ranked = search.screen([search.ArchSpec(12, (6,), 3)], X[:40], X[40:], tiny_budget())
        assert len(ranked) == 1

    def test_ranking_is_permutation(self):
        X = low_rank_data(80)
        archs = [search.ArchSpec(12, (8,), 3), search.ArchSpec(12, (6, 4), 3),
                 search.ArchSpec(12, (4,), 3)]
        ranked = search.screen(archs, X[:60], X[60:], tiny_budget())
        assert sorted(r.arch.descriptor() for r in ranked) == sorted(a.descriptor() for a in archs)
        assert [r.val_mse for r in ranked] == sorted(r.val_mse for r in ranked)

    def test_bit_reproducible(self):
        X = low_rank_data(60)
        archs = [search.ArchSpec(12, (8,), 3), search.ArchSpec(12, (6,), 3)]
        a = search.screen(archs, X[:40], X[40:], tiny_budget(3))
        b = search.screen(archs, X[:40], X[40:], tiny_budget(3))
        assert [r.val_mse for r in a] == [r.val_mse for r in b]

    def test_empty_archs_rejected(self):
        with pytest.raises(EmptySearchSpaceError):
            search.screen([], np.zeros((4, 2)), np.zeros((2, 2)), tiny_budget())


class TestRetrain:
    def test_k1_returns_best_only(self):
        X = low_rank_data(80)
        archs = [search.ArchSpec(12, (8,), 3), search.ArchSpec(12, (4,), 3)]
        ranked = search.screen(archs, X[:60], X[60:], tiny_budget())
        finalists = search.retrain_topk(ranked, 1, X[:60], X[60:], tiny_budget())
        assert len(finalists) == 1
        assert finalists[0].arch == ranked[0].arch

    def test_retrain_improves_or_holds(self):
        X = low_rank_data(100)
        ranked = search.screen([search.ArchSpec(12, (8,), 3)], X[:70], X[70:], tiny_budget())
        finalists = search.retrain_topk(ranked, 1, X[:70], X[70:], tiny_budget())
        assert finalists[0].val_mse <= ranked[0].val_mse + 1e-9

    def test_k_exceeds_ranked(self):
        X = low_rank_data(60)
        ranked = search.screen([search.ArchSpec(12, (6,), 3)], X[:40], X[40:], tiny_budget())
        with pytest.raises(InvalidSpecError):
            search.retrain_topk(ranked, 2, X[:40], X[40:], tiny_budget())


class TestSelectBest:
    def test_paper_spectral_example(self):
        # latent-9 best gets F2 0.688; latent-4 within 0.02 at 0.678 -> latent 4
        a9 = search.ArchSpec(128, (32, 32), 9)
        a4 = search.ArchSpec(128, (128, 128), 4)
        pick = search.select_best([(a9, 0.688), (a4, 0.678)],
                                  search.SelectionPolicy(min_f2_delta=0.02))
        assert pick == a4

    def test_single_finalist(self):
        a = search.ArchSpec(64, (32,), 4)
        assert search.select_best([(a, 0.5)]) == a

    def test_delta_zero_is_argmax(self):
        a = search.ArchSpec(64, (32,), 4)
        b = search.ArchSpec(64, (32,), 6)
        pick = search.select_best([(a, 0.60), (b, 0.61)], search.SelectionPolicy(min_f2_delta=0.0))
        assert pick == b

    def test_argmax_invariant_under_monotone_rescale(self):
        archs = [search.ArchSpec(64, (32,), k) for k in (3, 5, 7, 9)]
        f2s = [0.42, 0.58, 0.55, 0.61]
        base = search.select_best(list(zip(archs, f2s)), search.SelectionPolicy(min_f2_delta=0.0))
        for transform in (lambda v: v**3, lambda v: 10 * v - 1, lambda v: np.exp(v)):
            scaled = [(a, float(transform(v))) for a, v in zip(archs, f2s)]
            assert search.select_best(scaled, search.SelectionPolicy(min_f2_delta=0.0)) == base

    def test_tie_breaks_toward_fewer_params(self):
        small = search.ArchSpec(64, (32,), 4)
        big = search.ArchSpec(64, (64, 64), 4)
        pick = search.select_best([(big, 0.7), (small, 0.7)])
        assert pick == small

    def test_max_latent_filter(self):
        a = search.ArchSpec(64, (32,), 4)
        b = search.ArchSpec(64, (32,), 9)
        pick = search.select_best([(a, 0.5), (b, 0.9)],
                                  search.SelectionPolicy(max_latent=6, min_f2_delta=0.02))
        assert pick == a

    def test_empty_rejected(self):
        with pytest.raises(EmptySearchSpaceError):
            search.select_best([])


class TestReport:
    def test_csv_written(self, tmp_path):
        X = low_rank_data(60)
        archs = [search.ArchSpec(12, (8,), 3), search.ArchSpec(12, (6,), 3)]
        ranked = search.screen(archs, X[:40], X[40:], tiny_budget())
        path = tmp_path / "report.csv"
        search.write_search_report(path, ranked, retrained={ranked[0].arch.descriptor()})
        lines = path.read_text().splitlines()
        assert lines[0] == "arch,val_mse,n_params,n_macs,latent_dim,screened,retrained"
        assert len(lines) == 3
        assert lines[1].endswith(",1,1")  # best arch marked retrained
