import hashlib
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from app.config import config

logger = logging.getLogger(__name__)


class CacheManager:
    """Manages filesystem caching of noiseless synthetic acid fields"""

    def __init__(self, cache_dir: Path = None, enabled: Optional[bool] = None):
        self.cache_dir = Path(cache_dir or config.CACHE_DIR)
        self.enabled = config.CACHE_ENABLED if enabled is None else enabled

        if self.enabled:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def make_key(generator: Dict[str, Any]) -> str:
        """SHA-256 of the canonical JSON of the generating configuration"""
        payload = json.dumps(generator, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _get_cache_path(self, key: str) -> Path:
        """Generate cache file path for a key"""
        if not re.match(r'^[0-9a-f]{64}$', key):
            raise ValueError(f"Invalid cache key: {key}")

        cache_path = self.cache_dir / f"synthetic_{key}.npy"

        if not cache_path.resolve().is_relative_to(self.cache_dir.resolve()):
            raise ValueError("Path traversal attempt detected")

        return cache_path

    def get(self, key: str) -> Optional[np.ndarray]:
        """
        Retrieve a cached field.

        Args:
            key: Key from make_key

        Returns:
            The stored array, or None on a miss or unreadable entry
        """
        if not self.enabled:
            return None

        cache_path = self._get_cache_path(key)

        if not cache_path.exists():
            logger.debug(f"Cache miss: {key[:12]}")
            return None

        try:
            data = np.load(cache_path, allow_pickle=False)
            logger.debug(f"Cache hit: {key[:12]}")
            return data
        except (OSError, ValueError) as e:
            logger.warning(f"Failed to read cache entry {key[:12]}: {e}")
            return None

    def set(self, key: str, data: np.ndarray):
        """
        Store a field in the cache.

        Args:
            key: Key from make_key
            data: Array to store
        """
        if not self.enabled:
            return

        cache_path = self._get_cache_path(key)

        try:
            # Atomic write: write to temp file then rename
            temp_path = cache_path.with_suffix('.tmp')
            with temp_path.open('wb') as f:
                np.save(f, np.ascontiguousarray(data), allow_pickle=False)

            temp_path.replace(cache_path)
            logger.debug(f"Cached synthetic field: {key[:12]}")

        except OSError as e:
            logger.error(f"Failed to write cache entry {key[:12]}: {e}")

    def clear(self, key: Optional[str] = None):
        """
        Clear cache entries.

        Args:
            key: If provided, clear only this entry
        """
        if not self.enabled:
            return

        if key:
            cache_path = self._get_cache_path(key)
            if cache_path.exists():
                cache_path.unlink()
                logger.info(f"Cleared cache: {key[:12]}")
        else:
            for cache_file in self.cache_dir.glob("synthetic_*.npy"):
                cache_file.unlink()
            logger.info("Cleared entire cache")


# Global cache manager instance
cache_manager = CacheManager()
