# Importaciones de SQLAlchemy para operaciones asíncronas
from typing import List, Optional

from sqlalchemy.ext.asyncio import AsyncSession
from sqlalchemy.future import select

# Importaciones de nuestros módulos internos
from . import models, schemas

## ------------------------- CONVERSIONES ------------------------- ##

def to_summary(experiment: models.Experiment) -> schemas.ExperimentOut:
    """Experimento ORM -> esquema de salida sin métricas."""
    return schemas.ExperimentOut(
        id=experiment.id,
        policy=experiment.policy,
        master_seed=experiment.master_seed,
        rounds=experiment.rounds,
        created_at=experiment.created_at,
        summary=schemas.ExperimentSummary.model_validate_json(experiment.summary_json),
    )


def to_detail(experiment: models.Experiment, metrics: List[models.RoundMetric]) -> schemas.ExperimentDetail:
    """Experimento ORM + filas de métricas -> esquema de detalle."""
    base = to_summary(experiment)
    return schemas.ExperimentDetail(
        **base.model_dump(),
        config=schemas.ExperimentConfig.model_validate_json(experiment.config_json),
        metrics=[to_round_metrics(row) for row in metrics],
    )


def to_round_metrics(row: models.RoundMetric) -> schemas.RoundMetrics:
    return schemas.RoundMetrics(**{column: getattr(row, column) for column in schemas.METRIC_COLUMNS})

## ------------------------- CRUD de experimentos ------------------------- ##

async def save_experiment(db: AsyncSession, record: schemas.ExperimentRecord) -> models.Experiment:
    """
    Guarda un experimento completo (configuración, resumen y todas sus rondas).

    Args:
        db: Sesión de base de datos asíncrona.
        record: Resultado de sim.run_experiment.

    Returns:
        El experimento creado con su ID asignado.
    """
    db_experiment = models.Experiment(
        policy=record.config.policy,
        master_seed=record.config.master_seed,
        rounds=record.summary.completed_rounds,
        config_json=record.config.model_dump_json(),
        summary_json=record.summary.model_dump_json(),
    )
    db_experiment.metrics = [models.RoundMetric(**metrics.model_dump()) for metrics in record.rounds]
    db.add(db_experiment)
    await db.commit()
    await db.refresh(db_experiment, attribute_names=["id", "created_at"])
    return db_experiment


async def get_experiment(db: AsyncSession, experiment_id: int) -> Optional[models.Experiment]:
    """
    Obtiene un experimento por su ID.

    Returns:
        El experimento o None si no existe.
    """
    result = await db.execute(select(models.Experiment).where(models.Experiment.id == experiment_id))
    return result.scalar_one_or_none()


async def get_experiments(
    db: AsyncSession,
    policy: Optional[str] = None,
    skip: int = 0,
    limit: int = 50,
) -> List[models.Experiment]:
    """
    Lista experimentos, del más reciente al más antiguo.

    Args:
        policy: filtro opcional por política.
        skip: registros a saltar (paginación).
        limit: máximo de registros a devolver.
    """
    query = select(models.Experiment)
    if policy:
        query = query.where(models.Experiment.policy == policy)
    query = query.order_by(models.Experiment.id.desc()).offset(skip).limit(limit)
    result = await db.execute(query)
    return list(result.scalars().all())


async def get_round_metrics(db: AsyncSession, experiment_id: int) -> List[models.RoundMetric]:
    """Métricas por ronda de un experimento, ordenadas por ronda."""
    result = await db.execute(
        select(models.RoundMetric)
        .where(models.RoundMetric.experiment_id == experiment_id)
        .order_by(models.RoundMetric.round)
    )
    return list(result.scalars().all())


async def delete_experiment(db: AsyncSession, experiment_id: int) -> Optional[models.Experiment]:
    """
    Elimina un experimento y sus métricas.

    Returns:
        El experimento eliminado o None si no existía.
    """
    db_experiment = await get_experiment(db, experiment_id)
    if db_experiment is None:
        return None
    await db.delete(db_experiment)
    await db.commit()
    return db_experiment
