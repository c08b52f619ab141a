"""Useful stuff."""

import hashlib
import json
import os
from functools import partial
from typing import Any, Callable, Literal, TypeAlias

import numpy as np
from numpy.typing import ArrayLike
from tqdm import tqdm

TqdmStyle: TypeAlias = Literal["notebook", "console", "none"] | None
"""Type alias for supported TQDM styles of `make_tqdm`."""


def array_sha1(x: ArrayLike) -> str:
    """
    SHA1 hash of a float array. The shape is part of the hashed data, so
    `[[0, 0]]` and `[0, 0]` hash differently.
    """
    a = np.ascontiguousarray(to_array(x, dtype=np.float64))
    h = hashlib.sha1(str(a.shape).encode("utf-8"))
    h.update(a.tobytes())
    return h.hexdigest()


def dict_sha1(d: dict) -> str:
    """SHA1 hash of a JSON-serializable dict (keys are sorted first)"""
    return hashlib.sha1(
        json.dumps(d, sort_keys=True).encode("utf-8")
    ).hexdigest()


def get_reasonable_n_jobs() -> int:
    """
    Gets a reasonable number of jobs for parallel processing. Reasonable means
    it's not going to slam your system (hopefully). See the implementation for
    the exact scheme.
    """
    n = os.cpu_count()
    if n is None or n <= 2:
        return 1
    if n <= 8:
        return n // 2
    return 4


def make_tqdm(style: TqdmStyle = "console") -> Callable[..., tqdm]:
    """
    Returns the appropriate tqdm factory function based on the style.

    Args:
        style (TqdmStyle, optional): Defaults to "console".
    """
    if style is None or style == "none":
        return partial(tqdm, disable=True, leave=False)
    if style == "console":
        return partial(tqdm, leave=False)
    if style == "notebook":
        from tqdm.notebook import tqdm as _tqdm

        return partial(_tqdm, leave=False)
    raise ValueError(
        f"Unknown TQDM style '{style}'. Available styles are 'notebook', "
        "'console', or None"
    )


def to_array(x: ArrayLike, **kwargs: Any) -> np.ndarray:
    """
    Converts an array-like object to a numpy array. Numpy arrays are returned
    as is unless a `dtype` is requested.
    """
    if isinstance(x, np.ndarray) and "dtype" not in kwargs:
        return x
    return np.asarray(x, **kwargs)
