"""
Shared helpers: the package ``config.yaml`` and a timing decorator.
"""
import time
from functools import lru_cache
from pathlib import Path

import yaml
from tqdm import tqdm

PACKAGE_ROOT = Path(__file__).parent


class AttrDict(dict):
    """Dictionary whose keys can also be read as attributes."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError as e:
            raise AttributeError(name) from e

    @classmethod
    def wrap(cls, value):
        if isinstance(value, dict):
            return cls({k: cls.wrap(v) for k, v in value.items()})
        if isinstance(value, list):
            return [cls.wrap(v) for v in value]
        return value


@lru_cache(maxsize=1)
def package_config() -> AttrDict:
    """Configuration shipped with the package (options, presets, ablation grids)."""
    with open(PACKAGE_ROOT / 'config.yaml') as f:
        return AttrDict.wrap(yaml.safe_load(f) or {})


def timeit(method):
    """Decorator that times the execution of a method and prints the time taken."""
    def timed(*args, **kwargs):
        start_time = time.time()
        result = method(*args, **kwargs)
        end_time = time.time()
        tqdm.write(f"{method.__name__} took {end_time - start_time:.2f} seconds to run.")
        return result
    return timed
