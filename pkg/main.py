import logging
from typing import List, Optional, Union

from fastapi import FastAPI, HTTPException

from stt_engine import config
from stt_engine.errors import SttCubeError
from stt_engine.models import (
    BuildCubeRequest,
    MaterializeRequest,
    QueryResult,
    QuerySpec,
    RecordIn,
    Rejection,
    SttObject,
    UpdateCubeRequest,
)
from stt_engine.services.cube_service import cube_service, load_taxonomies
from stt_engine.services.ingest_service import parse_records, read_records, to_jsonl
from stt_engine.services.query_service import execute, rewrite

# Configure logging
logging.basicConfig(level=config.LOG_LEVEL, format=config.LOG_FORMAT)
logger = logging.getLogger(__name__)

app = FastAPI(
    title="STTCube API",
    description="Spatio-textual-temporal OLAP cubes over geo-tagged text: build, update, materialize and query",
    version="1.0.0",
)


def _objects(records: Optional[List[RecordIn]], data_path: Optional[str]) -> List[Union[SttObject, Rejection]]:
    if records is None and data_path is None:
        raise HTTPException(status_code=400, detail="Provide records or a data_path")
    objects: List[Union[SttObject, Rejection]] = []
    if records:
        objects.extend(parse_records(to_jsonl(record.model_dump() for record in records)))
    if data_path:
        objects.extend(read_records(data_path))
    return objects


def _cube(name: str):
    try:
        return cube_service.get(name)
    except KeyError:
        raise HTTPException(status_code=404, detail=f"Cube {name!r} not found")


def _result_payload(result: QueryResult) -> dict:
    plan = result.plan
    return {
        "plan": {
            "target": plan.target.label,
            "source": plan.source.label,
            "source_rows": plan.source_rows,
            "approximate": plan.approximate,
            "source_top_k": plan.source_top_k,
            "residual_group_by": plan.residual_group_by,
            "residual_filters": plan.residual_filters,
            "from_base": plan.from_base,
            "guarantee": plan.guarantee,
        },
        "rows": [row.model_dump() for row in result.rows],
        "rankings": [ranking.model_dump() for ranking in result.rankings],
    }


@app.get("/")
async def root():
    """Health check endpoint."""
    return {"message": "STTCube API is running", "cubes": cube_service.names()}


@app.post("/cubes")
async def build_cube_endpoint(request: BuildCubeRequest):
    """
    Build a cube from records and taxonomies.

    - **name**: registry name of the cube
    - **records** / **data_path**: inline records (lat, lon, text, ts) or a JSONL/CSV file
    - **geo_taxonomy_path**, **text_taxonomy_path**, **importance_path**: taxonomy files (packaged defaults when omitted)
    - **config**: spatial and textual schemes, grid and materialization strategy
    - **persist**: also write the cube directory

    Returns: JSON response with fact, rejection and cuboid counts
    """
    try:
        logger.info(f"Received request to build cube {request.name!r}")
        objects = _objects(request.records, request.data_path)
        taxonomies = load_taxonomies(request.geo_taxonomy_path, request.text_taxonomy_path, request.importance_path)
        cube = cube_service.build(request.name, objects, taxonomies, request.config, persist=request.persist)
        base, extra = cube.storage_rows()
        return {
            "success": True,
            "message": f"Cube {request.name!r} built with {cube.fact_count} facts",
            "name": request.name,
            "facts": cube.fact_count,
            "rejected": cube.rejected,
            "unknown_locations": cube.unknown_locations,
            "cuboids": len(cube.cuboids),
            "base_rows": base,
            "extra_rows": extra,
        }
    except HTTPException:
        raise
    except (SttCubeError, ValueError) as e:
        logger.error(f"Error building cube: {str(e)}", exc_info=True)
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error building cube: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to build cube: {str(e)}")


@app.post("/cubes/{name}/update")
async def update_cube_endpoint(name: str, request: UpdateCubeRequest):
    """Append records to a cube and refresh its materialized cuboids."""
    try:
        _cube(name)
        before = cube_service.get(name).fact_count
        cube = cube_service.update(name, _objects(request.records, request.data_path), persist=request.persist)
        return {
            "success": True,
            "message": f"Cube {name!r} updated with {cube.fact_count - before} facts",
            "name": name,
            "facts": cube.fact_count,
            "rejected": cube.rejected,
            "cuboids": len(cube.cuboids),
        }
    except HTTPException:
        raise
    except (SttCubeError, ValueError) as e:
        logger.error(f"Error updating cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error updating cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to update cube: {str(e)}")


@app.post("/cubes/{name}/materialize")
async def materialize_endpoint(name: str, request: MaterializeRequest):
    """Replace the materialized cuboids with the set the given strategy and budget select."""
    try:
        _cube(name)
        cube = cube_service.materialize(name, request.materialization, persist=request.persist)
        base, extra = cube.storage_rows()
        return {
            "success": True,
            "message": f"Cube {name!r} materialized with {request.materialization.strategy.value}",
            "name": name,
            "cuboids": sorted(coord.label for coord in cube.cuboids),
            "base_rows": base,
            "extra_rows": extra,
        }
    except HTTPException:
        raise
    except (SttCubeError, ValueError) as e:
        logger.error(f"Error materializing cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error materializing cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to materialize cube: {str(e)}")


@app.post("/cubes/{name}/query")
async def query_endpoint(name: str, request: QuerySpec):
    """
    Evaluate a measure over a cube.

    Returns: JSON response with the chosen plan, result rows and per-area rankings
    """
    try:
        cube = _cube(name)
        plan = rewrite(cube, request)
        result = execute(cube, request, plan)
        return {"success": True, "message": f"Evaluated {request.measure.value}", **_result_payload(result)}
    except HTTPException:
        raise
    except (SttCubeError, ValueError) as e:
        logger.error(f"Error querying cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Error querying cube {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to query cube: {str(e)}")


@app.get("/cubes/{name}/lattice")
async def lattice_endpoint(name: str):
    """Lattice nodes with their row counts and materialization flags."""
    try:
        cube = _cube(name)
        cube.ensure_sizes()
        rows = cube.lattice.dump().to_dict("records")
        return {"success": True, "message": f"{len(rows)} lattice nodes", "name": name, "nodes": rows}
    except HTTPException:
        raise
    except Exception as e:
        logger.error(f"Error dumping lattice of {name!r}: {str(e)}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to dump lattice: {str(e)}")


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
