import hashlib

import numpy as np

from adaptive_watermark.rng import Xoshiro256, as_rng, derive_seed, mix64, random_keys, splitmix64


def _reference_stream(seed, n):
    """xoshiro256** on numpy uint64 (wraps natively), seeded by SplitMix64."""
    with np.errstate(over="ignore"):
        x = np.uint64(seed)
        s = []
        for _ in range(4):
            x = x + np.uint64(0x9E3779B97F4A7C15)
            z = x
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            s.append(z ^ (z >> np.uint64(31)))

        def rotl(v, k):
            return (v << np.uint64(k)) | (v >> np.uint64(64 - k))

        out = []
        for _ in range(n):
            out.append(int(rotl(s[1] * np.uint64(5), 7) * np.uint64(9)))
            t = s[1] << np.uint64(17)
            s[2] ^= s[0]
            s[3] ^= s[1]
            s[1] ^= s[2]
            s[0] ^= s[3]
            s[2] ^= t
            s[3] = rotl(s[3], 45)
    return out


def test_splitmix64_known_value():
    _, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF


def test_xoshiro_matches_reference():
    for seed in (0, 1, 42, 2**63 + 5):
        g = Xoshiro256(seed)
        assert [g.next_u64() for _ in range(50)] == _reference_stream(seed, 50)


def test_random_in_unit_interval_and_deterministic():
    a, b = Xoshiro256(7), Xoshiro256(7)
    xs = [a.random() for _ in range(1000)]
    assert xs == [b.random() for _ in range(1000)]
    assert min(xs) >= 0.0 and max(xs) < 1.0
    assert abs(np.mean(xs) - 0.5) < 0.05


def test_derive_seed_is_sha256_prefix():
    want = int.from_bytes(hashlib.sha256(b"3:gen:0").digest()[:8], "little")
    assert derive_seed(3, "gen:0") == want
    assert derive_seed(3, "gen:0") != derive_seed(3, "gen:1")


def test_as_rng_and_spawn():
    g = Xoshiro256(5)
    assert as_rng(g) is g
    assert as_rng(5).getstate() == g.getstate()
    assert g.spawn("x").seed == derive_seed(5, "x")


def test_mix64_and_keys():
    assert mix64(1, 2) != mix64(2, 1)
    assert mix64(1, 2) == mix64(1, 2)
    k = random_keys(9, 4)
    assert k.dtype == np.uint64 and k.size == 4
    assert [int(v) for v in k] == _reference_stream(9, 4)
