from typing import Any, Dict

from fastapi import APIRouter, Body
from pydantic import ValidationError
from starlette.responses import JSONResponse

from app.cli import CONFIG_ERRORS, config_message
from app.core.config import logger
from app.core.schemas import ExperimentConfig
from app.experiments import list_experiments, run_experiment

router = APIRouter(prefix="/api/experiments", tags=["experiments"])


def _validate(payload: Dict[str, Any]) -> ExperimentConfig:
    return ExperimentConfig.model_validate(payload)


@router.get("")
async def experiments_list():
    return {"experiments": [{"id": e.id, "summary": e.summary} for e in list_experiments()]}


@router.post("/check")
async def experiments_check(payload: Dict[str, Any] = Body(...)):
    try:
        cfg = _validate(payload)
    except ValidationError as ex:
        return JSONResponse({"error": config_message(ex)}, status_code=400)
    return {"ok": True, "experiment": cfg.experiment}


# sync handler: FastAPI runs it in its worker threadpool
@router.post("/run")
def experiments_run(payload: Dict[str, Any] = Body(...)):
    try:
        cfg = _validate(payload)
        report = run_experiment(cfg)
    except CONFIG_ERRORS as ex:
        return JSONResponse({"error": config_message(ex)}, status_code=400)
    except Exception as ex:
        logger.exception(f"experiment run failed: {ex}")
        return JSONResponse({"error": f"{type(ex).__name__}: {ex}"}, status_code=500)
    return report.to_json_dict()
