# Services package

from .cube_service import SttCube, construct, cube_service, load_taxonomies, update
from .materialize_service import apply_strategy, greedy_materialize
from .query_service import execute, keyword_density, keyword_volatility, rewrite, topk_dense, topk_volatile
from .storage_service import load_cube, save_cube


__all__ = [
    "SttCube",
    "construct",
    "update",
    "cube_service",
    "load_taxonomies",
    "apply_strategy",
    "greedy_materialize",
    "execute",
    "rewrite",
    "keyword_density",
    "keyword_volatility",
    "topk_dense",
    "topk_volatile",
    "load_cube",
    "save_cube",
]
