import itertools
import math

import numpy as np
import pytest

from supportgen.errors import FitError
from supportgen.grammar import Instruction, enumerate_instructions, parse, realize
from supportgen.instruction_model import (
    SLOT_DOMAINS,
    InstructionModel,
    fit,
    sample_infill,
    score,
    slot_marginal,
)


def brute_force_score(corpus: list[Instruction], k: float, instr: Instruction) -> float:
    """Independent likelihood computation: explicit enumeration over all 675
    tuples with add-k smoothing, chain rule left to right."""
    def values(i: Instruction) -> tuple:
        return (i.verb, i.size_word, i.color_word, i.shape_word, i.adverb)

    unique = {values(i) for i in corpus}
    weight = {}
    for tup in itertools.product(*SLOT_DOMAINS):
        weight[tup] = (1.0 if tup in unique else 0.0) + k

    target = values(instr)
    total = 0.0
    for slot in range(5):
        prefix = target[:slot]
        num = sum(w for tup, w in weight.items()
                  if tup[:slot] == prefix and tup[slot] == target[slot])
        den = sum(w for tup, w in weight.items() if tup[:slot] == prefix)
        total += math.log(num / den)
    return total / 5.0


class TestFit:
    def test_empty_corpus(self):
        with pytest.raises(FitError):
            fit([])

    def test_balancing(self):
        x = parse("walk to a circle".split())
        y = parse("push a square".split())
        skewed = fit([x] * 99 + [y])
        flat = fit([x, y])
        assert np.array_equal(skewed.counts, flat.counts)

    def test_single_instruction_is_sampling_mode(self):
        # with smoothing on, the one observed form is still the unique mode
        from collections import Counter

        x = parse("pull a small yellow cylinder while spinning".split())
        model = fit([x], k=0.1)
        rng = np.random.default_rng(0)
        counts = Counter(sample_infill(model, x, 1.0, rng) for _ in range(2000))
        assert counts.most_common(1)[0][0] == x

    def test_uniform_marginals_on_full_grammar(self):
        model = fit(enumerate_instructions())
        for slot in range(5):
            marginal = slot_marginal(model, slot)
            assert np.allclose(marginal, 1.0 / len(marginal), atol=1e-9)

    def test_conditionals_sum_to_one(self):
        model = fit(list(enumerate_instructions())[::5])
        for slot in range(5):
            assert slot_marginal(model, slot).sum() == pytest.approx(1.0, abs=1e-9)


class TestSampleInfill:
    def test_mask_rate_zero_returns_query(self):
        model = fit(enumerate_instructions())
        query = parse("push a big blue cylinder while spinning".split())
        assert sample_infill(model, query, 0.0, 1) == query

    def test_fully_masked_single_corpus(self):
        x = parse("walk to a red circle".split())
        model = fit([x], k=0.0)
        assert sample_infill(model, parse("push a square".split()), 1.0, 5) == x

    def test_determinism_per_seed(self):
        model = fit(enumerate_instructions())
        query = parse("pull a small yellow cylinder while spinning".split())
        a = [sample_infill(model, query, 0.2, seed) for seed in range(50)]
        b = [sample_infill(model, query, 0.2, seed) for seed in range(50)]
        assert a == b

    def test_neighbour_spread(self):
        # samples concentrate near the query: most share >= 3 slots with it
        model = fit(enumerate_instructions())
        query = parse("pull a small yellow cylinder while spinning".split())
        rng = np.random.default_rng(7)
        overlaps = []
        for _ in range(2048):
            got = sample_infill(model, query, 0.2, rng)
            overlaps.append(sum(
                a == b for a, b in zip(
                    (got.verb, got.size_word, got.color_word, got.shape_word, got.adverb),
                    (query.verb, query.size_word, query.color_word, query.shape_word,
                     query.adverb))))
        overlaps = np.asarray(overlaps)
        assert (overlaps >= 3).mean() > 0.9
        assert (overlaps == 5).mean() > 0.3  # unmasked or resampled to itself
        assert any(o < 5 for o in overlaps)

    def test_empirical_frequencies_match_conditionals(self):
        # fully masked sampling follows the verb marginal within 3 sigma
        corpus = [i for i in enumerate_instructions() if i.verb != "pull"]
        corpus += [i for i in enumerate_instructions() if i.verb == "pull"][:20]
        model = fit(corpus)
        expected = slot_marginal(model, 0)
        rng = np.random.default_rng(12)
        n = 20_000
        counts = np.zeros(len(expected))
        query = parse("walk to a circle".split())
        for _ in range(n):
            got = sample_infill(model, query, 1.0, rng)
            counts[SLOT_DOMAINS[0].index(got.verb)] += 1
        for value, want in zip(counts / n, expected):
            sigma = math.sqrt(want * (1 - want) / n)
            assert abs(value - want) <= 3 * sigma + 1e-12


class TestScore:
    def test_seen_beats_unseen(self):
        x = parse("walk to a red circle".split())
        model = fit([x])
        for other in list(enumerate_instructions())[::31]:
            if other != x:
                assert score(model, x) > score(model, other)

    def test_duplication_invariance(self):
        x = parse("walk to a red circle".split())
        y = parse("push a square hesitantly".split())
        once = fit([x, y])
        thrice = fit([x, y] * 3)
        probe = parse("pull a big circle".split())
        assert score(once, probe) == pytest.approx(score(thrice, probe))

    def test_monotone_in_observations(self):
        base = list(enumerate_instructions())[::13]
        probe = parse("pull a small yellow cylinder while spinning".split())
        without = fit([i for i in base if i != probe])
        with_it = fit([i for i in base if i != probe] + [probe])
        assert score(with_it, probe) >= score(without, probe)

    def test_ranking_matches_brute_force(self):
        corpus = list(enumerate_instructions())[::7][:40]
        model = fit(corpus, k=0.1)
        probes = list(enumerate_instructions())[::33][:20]
        ours = sorted(probes, key=lambda i: (-round(score(model, i), 9),
                                             " ".join(realize(i))))
        brute = sorted(probes, key=lambda i: (-round(brute_force_score(corpus, 0.1, i), 9),
                                              " ".join(realize(i))))
        assert ours == brute
        for probe in probes:
            assert score(model, probe) == pytest.approx(
                brute_force_score(corpus, 0.1, probe), rel=1e-9)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        model = fit(list(enumerate_instructions())[::11], k=0.25)
        path = tmp_path / "model.json"
        model.save(path)
        back = InstructionModel.load(path)
        assert np.array_equal(back.counts, model.counts)
        assert back.k == model.k
        probe = parse("pull a circle".split())
        assert score(back, probe) == score(model, probe)
