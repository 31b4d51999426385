from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from .database import Base


def _utcnow():
    return datetime.now(timezone.utc)


class Experiment(Base):
    """
    Experimento persistido: instantánea de la configuración (JSON), resumen (JSON)
    y sus métricas por ronda.
    """
    __tablename__ = "experiments"

    id = Column(Integer, primary_key=True, index=True)
    policy = Column(String(16), nullable=False, index=True)  # proposed | random | full
    master_seed = Column(Integer, nullable=False)
    rounds = Column(Integer, nullable=False)  # rondas completadas
    config_json = Column(Text, nullable=False)
    summary_json = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), default=_utcnow)

    metrics = relationship(
        "RoundMetric",
        back_populates="experiment",
        cascade="all, delete-orphan",
        order_by="RoundMetric.round",
    )


class RoundMetric(Base):
    """Una fila por ronda completada; mismas columnas que el CSV de métricas."""
    __tablename__ = "round_metrics"

    id = Column(Integer, primary_key=True, index=True)
    experiment_id = Column(Integer, ForeignKey("experiments.id", ondelete="CASCADE"), nullable=False, index=True)
    round = Column(Integer, nullable=False)
    policy = Column(String(16), nullable=False)
    loss = Column(Float, nullable=False)
    accuracy = Column(Float, nullable=False)
    weighted_mass = Column(Float, nullable=False)
    scheduled_count = Column(Integer, nullable=False)
    residual_norm_sq = Column(Float, nullable=False)
    gap_term = Column(Float, nullable=False)
    system_latency = Column(Float, nullable=False)
    grad_norm_sq = Column(Float, nullable=False)
    postponements = Column(Integer, nullable=False, default=0)

    experiment = relationship("Experiment", back_populates="metrics")
