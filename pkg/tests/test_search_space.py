import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatsearch.errors import InvalidGene
from flatsearch.search_space import (SearchSpaceDef, active_mask, crossover, decode, encode, mutate,
                                     normalize, sample_uniform, validate)

SPACE = SearchSpaceDef()
seeds = st.integers(0, 2**32 - 1)


def test_gene_length_and_domains():
    assert SPACE.gene_length == 1 + 3 + 2 * 3 * 3
    sizes = SPACE.domain_sizes()
    assert sizes.shape == (SPACE.gene_length,)
    assert sizes[0] == 3 and all(sizes[1:4] == 3)


def test_full_scale_space_dimensions():
    big = SearchSpaceDef.full_size()
    assert len(big.resolution_choices) == 25
    assert big.resolution_choices[0] == 128 and big.resolution_choices[-1] == 224
    assert big.gene_length == 1 + 5 + 2 * 5 * 4


@pytest.mark.parametrize("kwargs", [
    dict(depth_choices=()),
    dict(kernel_choices=(5, 3)),
    dict(expansion_choices=(1, 1)),
    dict(stage_count=2),  # base_channels still has three widths
    dict(resolution_choices=(0, 16)),
])
def test_invalid_space_rejected(kwargs):
    with pytest.raises(ValueError):
        SearchSpaceDef(**kwargs)


def test_space_dict_round_trip():
    assert SearchSpaceDef.from_dict(SPACE.to_dict()) == SPACE


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_encode_decode_round_trip(seed):
    gene = sample_uniform(SPACE, seed)
    config = decode(SPACE, gene)
    canon = encode(SPACE, config)
    assert decode(SPACE, canon) == config
    # positions beyond a stage's depth are inert and encode as 0
    mask = active_mask(SPACE, gene)
    assert np.array_equal(np.asarray(canon)[mask], np.asarray(gene)[mask])
    assert all(np.asarray(canon)[~mask] == 0)


def test_inert_positions_do_not_change_decoding():
    gene = list(sample_uniform(SPACE, 3))
    gene[1] = 0  # stage 0 has depth 1: blocks 1 and 2 are inert
    base = decode(SPACE, gene)
    gene[SPACE.kernel_pos(0, 2)] = 1 - gene[SPACE.kernel_pos(0, 2)]
    gene[SPACE.expansion_pos(0, 1)] = (gene[SPACE.expansion_pos(0, 1)] + 1) % 3
    assert decode(SPACE, gene) == base


def test_decode_example_values():
    gene = [2, 0, 1, 2] + [0] * 9 + [0] * 9
    gene[SPACE.kernel_pos(2, 2)] = 1
    gene[SPACE.expansion_pos(1, 0)] = 2
    config = decode(SPACE, gene)
    assert config.input_resolution == 32
    assert [s.depth for s in config.stages] == [1, 2, 3]
    assert config.stages[2].kernels == (3, 3, 5)
    assert config.stages[1].expansions == (4, 1)
    assert [s.channels for s in config.stages] == [4, 8, 16]


@pytest.mark.parametrize("gene", [
    [0] * 21,
    [0] * 23,
    [3] + [0] * 21,
    [-1] + [0] * 21,
])
def test_invalid_genes(gene):
    with pytest.raises(InvalidGene):
        validate(SPACE, gene)
    with pytest.raises(InvalidGene):
        decode(SPACE, gene)


@settings(max_examples=100, deadline=None)
@given(seeds, seeds)
def test_variation_operators_stay_in_domain(s1, s2):
    a, b = sample_uniform(SPACE, s1), sample_uniform(SPACE, s2)
    for child in crossover(a, b, s1) + (mutate(SPACE, a, 0.3, s2),):
        validate(SPACE, child)
    c1, c2 = crossover(a, b, s2)
    # uniform crossover swaps genes position by position
    for x, y, p, q in zip(c1, c2, a, b):
        assert {x, y} == {p, q}


def test_mutation_extremes():
    gene = sample_uniform(SPACE, 11)
    assert mutate(SPACE, gene, 0.0, 1) == gene
    assert crossover(gene, gene, 5) == (gene, gene)


def test_crossover_length_mismatch():
    with pytest.raises(InvalidGene):
        crossover((0, 1), (0, 1, 2), 0)


def test_sampling_deterministic_and_uniform():
    assert sample_uniform(SPACE, 42) == sample_uniform(SPACE, 42)
    draws = np.array([sample_uniform(SPACE, s) for s in range(3000)])
    counts = np.bincount(draws[:, 0], minlength=3) / len(draws)
    assert np.allclose(counts, 1 / 3, atol=0.03)


def test_normalize_bounds():
    gene = tuple(SPACE.domain_sizes() - 1)
    assert np.all(normalize(SPACE, gene) == 1.0)
    assert np.all(normalize(SPACE, (0,) * SPACE.gene_length) == 0.0)
