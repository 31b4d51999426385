# Importamos las bibliotecas necesarias
import tempfile
from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, Response
from fastapi.concurrency import run_in_threadpool
from sqlalchemy.ext.asyncio import AsyncSession

from .. import crud, schemas
from ..database import get_db
from ..schemas import Policy
from ..sim import run_experiment, write_metrics

router = APIRouter(
    tags=["Experimentos"]  # Agrupación para la documentación Swagger/OpenAPI
)


async def _get_or_404(db: AsyncSession, experiment_id: int):
    db_experiment = await crud.get_experiment(db, experiment_id)
    if db_experiment is None:
        raise HTTPException(status_code=404, detail="Experimento no encontrado")
    return db_experiment


# Endpoint para ejecutar y guardar un experimento
@router.post("", response_model=schemas.ExperimentOut, status_code=201)
async def create_experiment(
    config: schemas.ExperimentConfig,  # Configuración completa (validada por el esquema)
    db: AsyncSession = Depends(get_db),
):
    """
    Ejecuta un experimento con la configuración recibida y lo persiste.

    La simulación es CPU intensiva, así que corre en el pool de hilos para no
    bloquear el bucle de eventos.

    Returns:
        El experimento creado con su resumen.
    """
    record = await run_in_threadpool(run_experiment, config)
    db_experiment = await crud.save_experiment(db, record)
    return crud.to_summary(db_experiment)


# Endpoint para listar experimentos
@router.get("", response_model=List[schemas.ExperimentOut])
async def read_experiments(
    policy: Optional[Policy] = None,  # Filtro opcional por política
    skip: int = 0,
    limit: int = 50,
    db: AsyncSession = Depends(get_db),
):
    """Lista los experimentos guardados, del más reciente al más antiguo."""
    experiments = await crud.get_experiments(db, policy=policy, skip=skip, limit=limit)
    return [crud.to_summary(experiment) for experiment in experiments]


# Endpoint para obtener un experimento con sus métricas
@router.get("/{experiment_id}", response_model=schemas.ExperimentDetail)
async def read_experiment(experiment_id: int, db: AsyncSession = Depends(get_db)):
    """
    Obtiene un experimento con su configuración y todas sus rondas.

    Raises:
        HTTPException 404: si el experimento no existe.
    """
    db_experiment = await _get_or_404(db, experiment_id)
    metrics = await crud.get_round_metrics(db, experiment_id)
    return crud.to_detail(db_experiment, metrics)


# Endpoint para descargar la tabla de métricas
@router.get("/{experiment_id}/metrics.csv")
async def read_experiment_metrics(experiment_id: int, db: AsyncSession = Depends(get_db)):
    """Devuelve el fichero de métricas del experimento (mismo formato que la CLI)."""
    db_experiment = await _get_or_404(db, experiment_id)
    metrics = await crud.get_round_metrics(db, experiment_id)
    detail = crud.to_detail(db_experiment, metrics)
    record = schemas.ExperimentRecord(config=detail.config, rounds=detail.metrics, summary=detail.summary)
    with tempfile.TemporaryDirectory() as tmp:
        path = write_metrics(record, Path(tmp) / "metrics.csv")
        content = path.read_text(encoding="utf-8")
    return Response(
        content=content,
        media_type="text/csv",
        headers={"Content-Disposition": f'attachment; filename="experiment_{experiment_id}.csv"'},
    )


# Endpoint para eliminar un experimento
@router.delete("/{experiment_id}", response_model=schemas.ExperimentOut)
async def delete_experiment(experiment_id: int, db: AsyncSession = Depends(get_db)):
    """
    Elimina un experimento y sus métricas.

    Returns:
        El experimento eliminado.
    """
    summary = crud.to_summary(await _get_or_404(db, experiment_id))
    await crud.delete_experiment(db, experiment_id)
    return summary
