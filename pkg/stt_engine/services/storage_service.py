import json
import logging
import shutil
import struct
import uuid
from pathlib import Path
from typing import Dict, Iterator, List, Union

import numpy as np
import pandas as pd

from ..errors import SchemaMismatchError, StorageError
from ..models import (
    BOUNDARY,
    FACT_COUNT,
    FREQ,
    GROUP_COLUMNS,
    KEYWORD,
    SURFACE_AREA,
    CubeConfig,
    Cuboid,
    CuboidCoord,
    FactRow,
    MemberStore,
)
from .cube_service import MEMBER_HIERARCHIES, FactStore, SttCube, load_taxonomies
from .lattice_service import UNKNOWN_ROWS

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TAXONOMY_FILES = {"geo": "geo_taxonomy.tsv", "text": "text_taxonomy.tsv", "importance": "importance.tsv"}
# Separates the terms of one fact record
TERM_SEPARATOR = "\x1f"
LENGTH = struct.Struct("<I")


# Facts


def encode_fact(row: FactRow) -> bytes:
    fields = [row.day, row.second, str(row.epoch), row.location, row.cell0, row.city, row.theme or "", TERM_SEPARATOR.join(row.terms)]
    payload = "\t".join(fields).encode("utf-8")
    return LENGTH.pack(len(payload)) + payload


def decode_facts(data: bytes) -> Iterator[FactRow]:
    offset = 0
    while offset < len(data):
        if offset + LENGTH.size > len(data):
            raise StorageError("facts file ends inside a length prefix")
        (size,) = LENGTH.unpack_from(data, offset)
        offset += LENGTH.size
        if offset + size > len(data):
            raise StorageError("facts file ends inside a record")
        fields = data[offset : offset + size].decode("utf-8").split("\t")
        offset += size
        if len(fields) != 8:
            raise StorageError(f"fact record with {len(fields)} fields")
        day, second, epoch, location, cell0, city, theme, terms = fields
        yield FactRow(
            day=day,
            second=second,
            location=location,
            cell0=cell0,
            city=city,
            terms=tuple(terms.split(TERM_SEPARATOR)),
            theme=theme or None,
            epoch=int(epoch),
        )


# Cuboids

GROUP_DTYPES = {**{name: str for name in GROUP_COLUMNS}, FACT_COUNT: np.int64, SURFACE_AREA: float, BOUNDARY: np.int64}
CELL_DTYPES = {**{name: str for name in GROUP_COLUMNS}, KEYWORD: str, FREQ: np.int64}


def _read_tsv(path: Path, dtypes: Dict[str, object]) -> pd.DataFrame:
    frame = pd.read_csv(path, sep="\t", dtype=dtypes, keep_default_na=False)
    return frame[list(dtypes)]


def _write_cuboid(cuboid: Cuboid, directory: Path) -> None:
    stem = cuboid.coord.file_stem
    cuboid.cells[list(CELL_DTYPES)].to_csv(directory / f"{stem}.tsv", sep="\t", index=False)
    cuboid.groups[list(GROUP_DTYPES)].to_csv(directory / f"{stem}.groups.tsv", sep="\t", index=False)


def _read_cuboid(coord: CuboidCoord, top_k, directory: Path) -> Cuboid:
    stem = coord.file_stem
    cells = _read_tsv(directory / f"{stem}.tsv", CELL_DTYPES)
    groups = _read_tsv(directory / f"{stem}.groups.tsv", GROUP_DTYPES)
    return Cuboid(coord=coord, groups=groups, cells=cells, top_k=top_k)


def _coord_from_label(cube: SttCube, label: str) -> CuboidCoord:
    names = [dimension.name for dimension in cube.lattice.dimensions]
    levels = label.split("|")
    if len(levels) != len(names):
        raise SchemaMismatchError(f"cuboid {label!r} does not match the cube's hierarchies")
    return CuboidCoord(tuple(zip(names, levels)))


# Cube directories


def _manifest(cube: SttCube) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "schema": cube.schema.model_dump(mode="json"),
        "config": cube.config.model_dump(mode="json"),
        "facts": cube.fact_count,
        "rejected": cube.rejected,
        "unknown_locations": cube.unknown_locations,
        "materialized": [
            {"coord": coord.label, "file": coord.file_stem, "top_k": cuboid.top_k, "rows": cuboid.row_count}
            for coord, cuboid in sorted(cube.cuboids.items())
        ],
        "taxonomy": {key: f"taxonomy/{name}" for key, name in TAXONOMY_FILES.items()},
    }


def _write(cube: SttCube, target: Path) -> None:
    for folder in ("members", "cuboids", "taxonomy"):
        (target / folder).mkdir(parents=True)

    sources = {
        "geo": cube.taxonomies.geo_path,
        "text": cube.taxonomies.text_path,
        "importance": cube.taxonomies.importance_path,
    }
    for key, source in sources.items():
        if source is None:
            raise StorageError(f"the {key} taxonomy was not loaded from a file and cannot be persisted")
        shutil.copyfile(source, target / "taxonomy" / TAXONOMY_FILES[key])

    for key in MEMBER_HIERARCHIES:
        cube.members.to_frame(key).to_csv(target / "members" / f"{key}.tsv", sep="\t", index=False)
    with open(target / "facts.bin", "wb") as handle:
        for row in cube.facts.rows:
            handle.write(encode_fact(row))
    for cuboid in cube.cuboids.values():
        _write_cuboid(cuboid, target / "cuboids")
    cube.lattice.write_dump(target / "lattice.tsv")
    (target / "schema.json").write_text(json.dumps(_manifest(cube), indent=2, sort_keys=True), encoding="utf-8")


def save_cube(cube: SttCube, path: Union[str, Path]) -> Path:
    """
    Persist a cube directory, replacing any previous contents

    Args:
        cube: the cube to save
        path: target directory

    Returns:
        The directory written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
    try:
        _write(cube, staging)
        if path.exists():
            retired = path.with_name(f".{path.name}.{uuid.uuid4().hex}.old")
            path.rename(retired)
            staging.rename(path)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            staging.rename(path)
    except Exception as e:
        shutil.rmtree(staging, ignore_errors=True)
        logger.error(f"Error saving cube to {path}: {str(e)}")
        if isinstance(e, StorageError):
            raise
        raise StorageError(f"could not save cube to {path}: {e}") from e

    logger.info(f"Saved cube with {cube.fact_count} facts and {len(cube.cuboids)} cuboids to {path}")
    return path


def _read_members(directory: Path) -> MemberStore:
    frames = {}
    for key in MEMBER_HIERARCHIES:
        file = directory / f"{key}.tsv"
        if file.exists():
            frames[key] = pd.read_csv(
                file,
                sep="\t",
                dtype={"level": str, "id": str, "name": str, "parent": str},
                keep_default_na=False,
                na_values={"parent": [""], "surface_area": [""]},
            )
    return MemberStore.from_frames(frames)


def _restore_sizes(cube: SttCube, directory: Path) -> None:
    dump = pd.read_csv(directory / "lattice.tsv", sep="\t", dtype={"coord": str}, keep_default_na=False)
    sizes = {
        _coord_from_label(cube, row.coord): int(row.row_count)
        for row in dump.itertuples(index=False)
        if int(row.row_count) != UNKNOWN_ROWS
    }
    cube.lattice.set_sizes(sizes)


def load_cube(path: Union[str, Path]) -> SttCube:
    """Load a cube directory written by ``save_cube``."""
    path = Path(path)
    try:
        manifest = json.loads((path / "schema.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise StorageError(f"could not read {path / 'schema.json'}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SchemaMismatchError(
            f"{path} has format version {manifest.get('format_version')!r}, expected {FORMAT_VERSION}"
        )

    try:
        config = CubeConfig.model_validate(manifest["config"])
        taxonomy = {key: path / relative for key, relative in manifest["taxonomy"].items()}
        taxonomies = load_taxonomies(taxonomy["geo"], taxonomy["text"], taxonomy["importance"])
        facts = FactStore()
        facts.append(list(decode_facts((path / "facts.bin").read_bytes())))
        cube = SttCube(config, taxonomies, members=_read_members(path / "members"), facts=facts)
        if cube.schema.model_dump(mode="json") != manifest["schema"]:
            raise SchemaMismatchError(f"{path} schema does not match its configuration")
        cube.rejected = int(manifest.get("rejected", 0))
        cube.unknown_locations = int(manifest.get("unknown_locations", 0))
        _restore_sizes(cube, path)
        loaded: List[Cuboid] = []
        for entry in manifest["materialized"]:
            coord = _coord_from_label(cube, entry["coord"])
            loaded.append(_read_cuboid(coord, entry["top_k"], path / "cuboids"))
        for cuboid in loaded:
            cube.store(cuboid)
    except (SchemaMismatchError, StorageError):
        raise
    except (OSError, KeyError, ValueError) as e:
        raise StorageError(f"could not load cube from {path}: {e}") from e

    if len(facts) != manifest.get("facts", len(facts)):
        raise StorageError(f"{path} lists {manifest['facts']} facts but stores {len(facts)}")
    logger.info(f"Loaded cube with {cube.fact_count} facts and {len(cube.cuboids)} cuboids from {path}")
    return cube
