import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesoreduce.algebra import (
    ClusterPartition,
    LiouvillianSpec,
    MomentModel,
    ParticleSystem,
    aggregate_couplings,
    cluster_moments,
    find_invariance_depth,
    initial_spec,
    multipolar_truncate,
    reduce_chain,
    reduce_once,
    shape_name,
    signature,
    substitute_com,
)
from mesoreduce.polynomial import parse_polynomial as P


def chain_system(n=8, k=2, lam=3, pair="x^2", ext="x^3"):
    return ParticleSystem(
        masses=(1,) * n,
        pair_couplings={(j, j + 1): k for j in range(1, n)},
        external_couplings=(lam,) * n,
        pair_potential=P(pair),
        external_potential=P(ext),
    )


def halving_chain(n):
    parts, size = [], n
    while size > 1:
        parts.append(ClusterPartition(tuple(i // 2 + 1 for i in range(size))))
        size //= 2
    parts.append(ClusterPartition((1,)))
    return parts


def test_partition_must_be_contiguous():
    with pytest.raises(ValueError, match="contiguous"):
        ClusterPartition((1, 3, 3))
    with pytest.raises(ValueError):
        ClusterPartition(())


def test_particle_system_validation():
    with pytest.raises(ValueError, match="positive"):
        ParticleSystem((1, -1), {}, (0, 0), P("x^2"), P("x"))
    with pytest.raises(ValueError, match="asymmetric"):
        ParticleSystem((1, 1), {(1, 2): 1, (2, 1): 2}, (0, 0), P("x^2"), P("x"))


def test_aggregated_couplings_match_member_sums():
    sys_ = ParticleSystem(
        masses=(1, 2, 3, 4, 5),
        pair_couplings={(1, 2): 1, (1, 4): 2, (2, 5): Fraction(1, 3), (3, 4): 7},
        external_couplings=(1, 1, 2, 3, 5),
        pair_potential=P("x^2"),
        external_potential=P("x^3"),
    )
    part = ClusterPartition((1, 1, 2, 2, 3))
    agg = aggregate_couplings(sys_, part)
    for a, b in itertools.permutations(range(1, 4), 2):
        expect = sum(
            (sys_.coupling(j + 1, k + 1) for j in part.members(a) for k in part.members(b)), Fraction(0)
        )
        assert agg.pair[(a, b)] == expect == agg.pair[(b, a)]
    assert agg.masses == {1: 3, 2: 7, 3: 5}
    assert agg.external == {1: 2, 2: 5, 3: 5}


def test_cluster_moments_centre_of_mass():
    sys_ = chain_system(4)
    m = cluster_moments(sys_, ClusterPartition((1, 1, 2, 2)), [0, 2, 5, 7])
    assert m["com"] == {1: 1, 2: 6}
    assert m["relative"] == [-1, 1, -1, 1]
    assert m["dipole"] == {1: 0, 2: 0}


def test_substitution_then_truncation_reconstructs_low_order():
    p = P("x1^3 + 2*x1*x2")
    part = ClusterPartition((1, 1))
    full = substitute_com(p, part, ("x1", "x2"))
    e = multipolar_truncate(full)
    assert e.residual
    assert e.reconstruct() + e.discarded == full
    assert e.zeroth == P("y1_1^3 + 2*y1_1^2")


def test_singleton_cluster_has_no_internal_coordinate():
    full = substitute_com(P("x1^2 + x2^2"), ClusterPartition((1, 2)), ("x1", "x2"))
    assert full.used_variables() == ("y1_1", "y1_2")


def test_reduce_once_harmonic_cubic_four_term_structure():
    spec = initial_spec(chain_system())
    l1 = reduce_once(spec, ClusterPartition((1, 1, 2, 2, 3, 3, 4, 4)))
    assert signature(l1) == (
        ("G", "pair-linear"),
        ("G", "quadratic"),
        ("H", "cubic"),
        ("H", "pair-quadratic"),
    )
    assert l1.masses == (2, 2, 2, 2)
    # K' = 2 per bond, lambda' = 2 * 3 per cluster
    assert (Fraction(2), P("y1_1^2 - 2*y1_1*y1_2 + y1_2^2")) in l1.hamiltonian
    assert (Fraction(6), P("y1_1^3")) in l1.hamiltonian
    assert l1.kinetic and l1.scale == 1


def test_moment_model_sets_channel_strengths():
    spec = initial_spec(chain_system(4))
    mm = MomentModel(default_variance=2, timescale=Fraction(1, 4), variances={"quadratic": 6})
    l1 = reduce_once(spec, ClusterPartition((1, 1, 2, 2)), mm)
    gammas = {shape_name(g): c for c, g in l1.decoherence}
    assert gammas == {"pair-linear": Fraction(1, 2), "quadratic": Fraction(3, 2)}


def test_negative_variance_rejected():
    with pytest.raises(ValueError, match="negative"):
        MomentModel(default_variance=-1)


def test_operator_text_round_trip():
    spec = reduce_chain(initial_spec(chain_system()), halving_chain(8)[:2])[-1]
    again = LiouvillianSpec.from_text(spec.to_text())
    assert again == spec
    assert again.to_text() == spec.to_text()


def test_canonical_form_merges_and_prunes():
    spec = LiouvillianSpec(
        ("x",), (1,),
        hamiltonian=[(1, P("2*x^2")), (3, P("x^2")), (5, P("1"))],
        decoherence=[(1, P("-2*x")), (0, P("x^3"))],
    )
    assert spec.hamiltonian == ((Fraction(5), P("x^2")),)
    assert spec.decoherence == ((Fraction(4), P("x")),)


@pytest.mark.parametrize(
    "pair, ext, expected",
    [("x^2", "0", 2), ("0", "x^3", 3), ("0", "0", 0)],
)
def test_invariance_depths(pair, ext, expected):
    sys_ = chain_system(16, pair=pair, ext=ext)
    if pair == "0":
        sys_ = ParticleSystem(sys_.masses, {}, sys_.external_couplings, P(pair), P(ext))
    assert find_invariance_depth(initial_spec(sys_), halving_chain(16)) == expected


def test_invariance_depth_none_within_limit():
    sys_ = chain_system(16, pair="0", ext="x^3")
    assert find_invariance_depth(initial_spec(sys_), halving_chain(16), max_depth=2) is None


def test_inconsistent_chain_is_reported():
    bad = [ClusterPartition((1, 1, 2, 2, 3, 3, 4, 4)), ClusterPartition((1, 1, 2))]
    with pytest.raises(ValueError, match="inconsistent partition chain"):
        find_invariance_depth(initial_spec(chain_system()), bad)


def test_shape_names():
    assert shape_name(P("y1_2 - y1_5")) == "pair-linear"
    assert shape_name(P("a^2 - 2*a*b + b^2")) == "pair-quadratic"
    assert shape_name(P("3*z^3")) == "cubic"
    # relabeling-blind and coefficient-blind
    assert shape_name(P("a^2 + a*b")) == shape_name(P("3*b^2 - a*b")) == "{a*b, b^2}"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=4, max_size=4), st.integers(1, 5))
def test_reduction_keeps_exact_zeroth_order(qs, lam):
    """Zeroth order equals the potential evaluated at the centres of mass."""
    sys_ = ParticleSystem((1,) * 4, {(1, 2): qs[0], (2, 3): qs[1], (3, 4): qs[2], (1, 4): qs[3]},
                          (lam,) * 4, P("x^2"), P("x^3"))
    spec = initial_spec(sys_)
    part = ClusterPartition((1, 1, 2, 2))
    l1 = reduce_once(spec, part)
    y = {"y1_1": Fraction(1, 3), "y1_2": Fraction(-2, 5)}
    x = {f"x{i + 1}": y[f"y1_{part.assignment[i]}"] for i in range(4)}
    assert l1.potential.evaluate(y) == spec.potential.evaluate(x)
