import numpy as np
import pytest

from app.services.cache_manager import CacheManager


def test_keys_are_canonical():
    a = CacheManager.make_key({"nod": 201, "tau": 0.5})
    b = CacheManager.make_key({"tau": 0.5, "nod": 201})

    assert a == b
    assert a != CacheManager.make_key({"nod": 401, "tau": 0.5})
    assert len(a) == 64


def test_set_then_get(cache, rng):
    key = CacheManager.make_key({"delta1_hat": 12.5})
    data = rng.random((5, 7))

    assert cache.get(key) is None
    cache.set(key, data)

    assert np.array_equal(cache.get(key), data)
    assert not list(cache.cache_dir.glob("*.tmp"))


@pytest.mark.parametrize("key", ["../escape", "ABC", "0" * 63])
def test_invalid_keys_are_rejected(cache, key):
    with pytest.raises(ValueError):
        cache.get(key)


def test_unreadable_entry_is_a_miss(cache):
    key = CacheManager.make_key({"delta1_hat": 4.0})
    (cache.cache_dir / f"synthetic_{key}.npy").write_bytes(b"not an array")

    assert cache.get(key) is None


def test_clear(cache, rng):
    keys = [CacheManager.make_key({"seed": s}) for s in range(3)]
    for key in keys:
        cache.set(key, rng.random(4))

    cache.clear(keys[0])
    assert cache.get(keys[0]) is None
    assert cache.get(keys[1]) is not None

    cache.clear()
    assert all(cache.get(key) is None for key in keys)


def test_disabled_cache_stores_nothing(tmp_path, rng):
    cache = CacheManager(tmp_path / "off", enabled=False)
    key = CacheManager.make_key({"seed": 1})

    cache.set(key, rng.random(3))

    assert cache.get(key) is None
    assert not (tmp_path / "off").exists()
