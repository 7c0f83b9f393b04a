import os
from typing import Any, Dict, List

import fastapi
from fastapi import Depends, FastAPI
from pydantic import BaseModel

from app.cauchy.cauchy_algebra import tabulate
from app.config import Config
from app.dependencies import get_output_root
from app.harness.config_parser import ConfigParser, ConfigValidationError
from app.harness.persistence import RunManifest, load_manifest
from app.harness.runner import run

app = FastAPI(title="exterior-wave-maps")

logger = Config.init_logging()


class ExperimentRequest(BaseModel):
    config: str
    overrides: List[str] = []


def _violations(error: ConfigValidationError) -> List[Dict[str, Any]]:
    return [{"line": line, "key": key, "message": message} for line, key, message in error.violations]


###############################################################################################
########### ROUTES


@app.post("/experiments", response_model=RunManifest)
def submit_experiment(request: ExperimentRequest, output_root: str = Depends(get_output_root)):
    """
    Validate a config and run it to completion.

    Args:
        request: config text in the line-based format plus optional key=value overrides

    Returns:
        RunManifest: the manifest of the finished run

    Raises:
        HTTPException: 422 for an invalid config, 500 if the experiment fails
    """
    try:
        config = ConfigParser.parse_config(request.config, request.overrides, output_root=output_root)
    except ConfigValidationError as e:
        raise fastapi.HTTPException(status_code=422, detail=_violations(e))

    logger.info(f"Experiment submitted: kind='{config.kind}' hash={config.config_hash()[:12]}")
    try:
        return run(config, output_root=output_root)
    except (RuntimeError, ValueError) as e:
        logger.error(f"Experiment {config.kind} failed: {e}")
        raise fastapi.HTTPException(status_code=500, detail=f"Experiment failed: {e}")


@app.get("/experiments/{run_id}/manifest", response_model=RunManifest)
def get_manifest(run_id: str, output_root: str = Depends(get_output_root)):
    if os.path.basename(run_id) != run_id or run_id in ("", ".", ".."):
        raise fastapi.HTTPException(status_code=404, detail=f"No run '{run_id}'")
    try:
        return load_manifest(os.path.join(output_root, run_id))
    except FileNotFoundError:
        raise fastapi.HTTPException(status_code=404, detail=f"No finished run '{run_id}'")


@app.get("/coefficients/{d}")
def get_coefficients(d: int):
    """
    Exact c_j, d_j and identity residuals for odd d, as numerator/denominator pairs.
    """
    if d < 3 or d % 2 == 0:
        raise fastapi.HTTPException(status_code=422, detail=f"Dimension must be odd and >= 3, got d={d}")
    table = tabulate([d])
    rows = [
        {"family": family, "index": int(index), "numerator": int(numerator), "denominator": int(denominator)}
        for _, family, index, numerator, denominator in table.itertuples(index=False, name=None)
    ]
    return {"d": d, "rows": rows}
