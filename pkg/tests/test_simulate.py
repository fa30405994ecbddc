import math

import numpy as np
import pytest

from dfa_meet.chains import hitting_time_expectation, product_matrix, walk_matrix
from dfa_meet.dfa import Dfa, generate_dfa
from dfa_meet.seeds import seed_split
from dfa_meet.simulate import (
    RunManifest,
    default_cap,
    read_records_csv,
    run_experiment,
    run_trial,
    sample_coalescence,
    sample_kingman_reference,
    sample_meeting_coupled,
    sample_meeting_independent,
    sample_meeting_independent_batch,
    sample_sync,
    sync_image_sizes,
    write_records_csv,
)
from tests.test_chains import full_image_dfa


def constant_color_dfa(n, r):
    """Color 0 sends every vertex to 0; the other colors shift."""
    out = np.empty((n, r), dtype=np.int64)
    out[:, 0] = 0
    for c in range(1, r):
        out[:, c] = (np.arange(n) + c) % n
    for x in range(n):
        row = out[x]
        if len(set(row.tolist())) != r:  # repair collisions with 0
            pool = [v for v in range(n) if v not in row[:1]]
            out[x, 1:] = pool[: r - 1]
    return Dfa(n=n, r=r, out=out)


def test_equal_starts_meet_immediately():
    d = generate_dfa(10, 2, seed=0)
    assert sample_meeting_independent(d, 4, 4, 100, seed=1).tau == 0
    assert sample_meeting_coupled(d, 4, 4, 100, seed=1).tau == 0


def test_independent_meeting_uniform_chain_geometric():
    """On the full-image DFA the per-step meeting probability is exactly 1/n."""
    n = 30
    d = full_image_dfa(n)
    taus = np.array([
        sample_meeting_independent(d, 0, 1, 10_000, seed=s).tau for s in range(4000)
    ])
    se = taus.std(ddof=1) / math.sqrt(taus.size)
    assert abs(taus.mean() - n) <= 3 * se


def test_coupled_constant_color_bounded_by_letter_hit():
    d = constant_color_dfa(12, 3)
    for s in range(100):
        rec = sample_meeting_coupled(d, 2, 7, 1000, seed=s)
        assert not rec.censored
    taus = np.array([sample_meeting_coupled(d, 2, 7, 1000, seed=s).tau for s in range(3000)])
    # the shared word collapses both walks at the first occurrence of color 0
    assert taus.mean() <= 3.0 + 3 * taus.std(ddof=1) / math.sqrt(taus.size)


def test_sync_constant_color_geometric():
    d = constant_color_dfa(12, 3)
    taus = np.array([sample_sync(d, 1000, seed=s).tau for s in range(3000)])
    se = taus.std(ddof=1) / math.sqrt(taus.size)
    assert abs(taus.mean() - 3.0) <= 4 * se  # Geom(1/r) mean r


def test_coalescence_two_walkers_matches_exact_product_solve():
    d = full_image_dfa(2)
    taus = np.array([
        sample_coalescence(d, 1000, seed=s).tau for s in range(4000)
    ])
    chain = walk_matrix(d)
    prod = product_matrix(chain)
    start = np.zeros(4)
    start[0 * 2 + 1] = 1.0
    exact = hitting_time_expectation(prod, start, [0, 3])
    assert exact == pytest.approx(2.0, abs=1e-12)
    se = taus.std(ddof=1) / math.sqrt(taus.size)
    assert abs(taus.mean() - exact) <= 3 * se


def test_coalescence_debug_pair_matches_independent_meeting():
    """Two-walker coalescence has the law of the independent meeting time."""
    from dfa_meet.stats import EmpiricalDist, ks_two_sample

    d = generate_dfa(100, 2, seed=5)
    coal = np.array([
        sample_coalescence(d, 10**5, seed=seed_split(1, i, "pair"), walkers=[3, 77]).tau
        for i in range(10_000)
    ])
    meet = np.array([
        sample_meeting_independent(d, 3, 77, 10**5, seed=seed_split(2, i, "meet")).tau
        for i in range(10_000)
    ])
    ks = ks_two_sample(EmpiricalDist.from_samples(coal), meet)
    assert ks <= 0.02


def test_sync_image_sizes_non_increasing():
    for seed in range(5):
        d = generate_dfa(40, 2, seed=seed)
        rng = np.random.default_rng(seed)
        word = rng.integers(0, 2, size=200).tolist()
        sizes = sync_image_sizes(d, word)
        assert sizes[0] == 40
        assert all(b <= a for a, b in zip(sizes, sizes[1:]))


def test_batch_sampler_matches_per_trial_distribution():
    from dfa_meet.stats import EmpiricalDist, ks_two_sample

    d = generate_dfa(60, 2, seed=9)
    taus_batch, censored = sample_meeting_independent_batch(d, 0, 1, 8000, 10**5, seed=3)
    assert not censored.any()
    taus_single = np.array([
        sample_meeting_independent(d, 0, 1, 10**5, seed=seed_split(4, i, "s")).tau
        for i in range(8000)
    ])
    ks = ks_two_sample(EmpiricalDist.from_samples(taus_batch), taus_single)
    assert ks <= 0.03


def test_kingman_reference_moments():
    # n=2 is a single Exp(1) draw
    draws = sample_kingman_reference(2, seed=0, size=200_000)
    assert abs(draws.mean() - 1.0) <= 0.01
    # telescoping mean: 2 (1 - 1/n)
    draws = sample_kingman_reference(1000, seed=1, size=100_000)
    assert abs(draws.mean() - 2 * (1 - 1 / 1000)) <= 0.02
    scalar = sample_kingman_reference(5, seed=2)
    assert isinstance(scalar, float) and scalar > 0


def test_censoring_at_cap():
    # disjoint 2-cycles never meet from distinct components
    out = np.array([[1, 2], [0, 3], [3, 0], [2, 1]])
    d = Dfa(n=4, r=2, out=out)
    rec = sample_meeting_independent(d, 0, 1, cap=50, seed=0)
    assert rec.tau <= 50
    if rec.censored:
        assert rec.tau == 50


def test_default_cap_formula():
    assert default_cap(1000) == 50 * 1000 * 7


def test_run_experiment_deterministic_and_worker_independent(tmp_path):
    manifest = RunManifest(master_seed=5, mode="independent", n=50, r=2, trials=60)
    a = run_experiment(manifest, workers=1)
    b = run_experiment(manifest, workers=2)
    assert a == b
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_records_csv(a, p1)
    write_records_csv(b, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_trial_replay_from_derived_seed():
    manifest = RunManifest(master_seed=9, mode="coupled", n=40, r=3, trials=20)
    records = run_experiment(manifest, workers=1)
    for rec in records[:5]:
        assert rec.derived_seed == seed_split(9, rec.trial, "coupled")
        replay = run_trial(manifest, rec.trial)
        assert replay == rec


def test_empty_run_produces_header_only_csv(tmp_path):
    manifest = RunManifest(master_seed=1, mode="sync", n=10, r=2, trials=0)
    records = run_experiment(manifest)
    path = tmp_path / "empty.csv"
    write_records_csv(records, path)
    assert path.read_text().strip() == "trial,derived_seed,mode,n,r,x,y,tau,censored"
    assert read_records_csv(path) == []


def test_csv_round_trip(tmp_path):
    manifest = RunManifest(master_seed=2, mode="coalescing", n=12, r=2, trials=8)
    records = run_experiment(manifest)
    path = tmp_path / "out.csv"
    write_records_csv(records, path)
    assert read_records_csv(path) == records
    assert "\r\n" in path.read_bytes().decode()


def test_fixed_dfa_policy(tmp_path):
    from dfa_meet.dfa import serialize_dfa

    d = generate_dfa(30, 2, seed=77)
    dfa_path = tmp_path / "dfa.json"
    dfa_path.write_text(serialize_dfa(d))
    manifest = RunManifest(
        master_seed=3, mode="independent", n=30, r=2, trials=10,
        dfa_policy="fixed", dfa_path=str(dfa_path), starts=(0, 1),
    )
    records = run_experiment(manifest, workers=1)
    assert all(rec.x == 0 and rec.y == 1 for rec in records)
    # replaying any trial gives the same outcome
    assert run_trial(manifest, 4, fixed_dfa=d) == records[4]


def test_manifest_validation():
    with pytest.raises(ValueError, match="unknown mode"):
        RunManifest(master_seed=0, mode="walk", n=5, r=2, trials=1)
    with pytest.raises(ValueError, match="starts"):
        RunManifest(master_seed=0, mode="sync", n=5, r=2, trials=1, starts=(0, 1))
    with pytest.raises(ValueError, match="dfa_path"):
        RunManifest(master_seed=0, mode="independent", n=5, r=2, trials=1, dfa_policy="fixed")


def test_uniform_starts_recorded_and_distinct():
    manifest = RunManifest(master_seed=4, mode="independent", n=25, r=2, trials=50)
    records = run_experiment(manifest, workers=1)
    assert all(rec.x != rec.y for rec in records)
    assert all(0 <= rec.x < 25 and 0 <= rec.y < 25 for rec in records)
