# Importaciones necesarias
from datetime import datetime
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.phy import PhyConfig

Policy = Literal["proposed", "random", "full"]
POLICIES = ("proposed", "random", "full")

## ------------------------- CONFIGURACIÓN DEL EXPERIMENTO ------------------------- ##

class ExperimentConfig(BaseModel):
    """
    Todos los parámetros de un experimento. Los valores por defecto son los del
    escenario de referencia (K=50, N=4, B=10 MHz, N0=-174 dBm/Hz, T^thr=1 s,
    P_sum=30 mW, I=32, eta=5e-3).
    """
    model_config = ConfigDict(extra="forbid")

    # Red y radio
    device_count: int = Field(50, ge=1)  # K
    antenna_count: int = Field(4, ge=1)  # N
    inner_radius: float = Field(50.0, gt=0)  # m
    outer_radius: float = Field(250.0, gt=0)  # m
    bandwidth: float = Field(10e6, gt=0)  # Hz
    noise_psd: float = -174.0  # dBm/Hz
    latency_threshold: float = Field(1.0, gt=0)  # s
    sum_power: float = Field(0.03, gt=0)  # W
    bits_per_param: int = Field(32, ge=1)
    payload_dim: int = Field(30720, ge=1)  # d usado por el modelo de latencia
    per_sample_compute_time: float = Field(1e-4, gt=0)  # s por muestra

    # Aprendizaje
    rounds: int = Field(5000, ge=1)  # tau
    learning_rate: float = Field(5e-3, gt=0)
    sample_count: int = Field(2000, ge=1)
    feature_dim: int = Field(32, ge=1)
    num_classes: int = Field(10, ge=2)
    class_separation: float = Field(1.0, gt=0)
    dataset_path: Optional[str] = None

    # Programación
    policy: Policy = "proposed"
    reweighted: bool = False
    reweight_iterations: int = Field(3, ge=1)
    random_attempts: int = Field(20, ge=1)
    max_postponements: int = Field(100, ge=0)

    # Ejecución
    master_seed: int = Field(0, ge=0)
    check_invariants: bool = True
    output_path: Optional[str] = None

    @model_validator(mode="after")
    def check_geometry(self):
        if self.inner_radius > self.outer_radius:
            raise ValueError("inner_radius no puede superar outer_radius")
        return self

    def phy(self) -> PhyConfig:
        """Parámetros de capa física derivados de la configuración."""
        return PhyConfig(
            bandwidth=self.bandwidth,
            noise_psd=self.noise_psd,
            bits_per_param=self.bits_per_param,
            model_dim=self.payload_dim,
            per_sample_compute_time=self.per_sample_compute_time,
            latency_threshold=self.latency_threshold,
            sum_power=self.sum_power,
        )


## ------------------------- MÉTRICAS ------------------------- ##

class RoundMetrics(BaseModel):
    """
    Métricas de una ronda completada. Las columnas del fichero de métricas siguen
    el orden de METRIC_COLUMNS.
    """
    round: int
    policy: Policy
    loss: float  # F(w_t)
    accuracy: float  # precisión de entrenamiento
    weighted_mass: float = Field(ge=0.0)  # sum_{k in S_t} alpha_k
    scheduled_count: int = Field(ge=0)
    residual_norm_sq: float = Field(ge=0.0)  # ||e_t||²
    gap_term: float = Field(ge=0.0, le=1.0)  # (1 - sum alpha_k)²
    system_latency: float  # T^sys, s
    grad_norm_sq: float = Field(ge=0.0)  # ||grad F(w_{t-1})||²
    postponements: int = Field(0, ge=0)


METRIC_COLUMNS = (
    "round",
    "policy",
    "loss",
    "accuracy",
    "weighted_mass",
    "scheduled_count",
    "residual_norm_sq",
    "gap_term",
    "system_latency",
    "grad_norm_sq",
    "postponements",
)


class ExperimentSummary(BaseModel):
    """Resumen del experimento, recalculable a partir de las rondas y las constantes."""
    completed_rounds: int
    final_loss: float
    final_accuracy: float
    mean_weighted_mass: float
    theorem_bound: float
    measured_avg_grad_norm_sq: float
    smoothness: float
    kappa_analytic: float
    kappa_empirical: float
    step_size: float
    initial_loss: float
    optimal_loss_estimate: float
    postponed_rounds: int
    solver_failures: int


class ExperimentRecord(BaseModel):
    """Instantánea de la configuración + métricas por ronda + resumen."""
    config: ExperimentConfig
    rounds: List[RoundMetrics]
    summary: ExperimentSummary


## ------------------------- ESQUEMAS DE LA API ------------------------- ##

class ExperimentOut(BaseModel):
    """Experimento persistido (sin las métricas por ronda)."""
    model_config = ConfigDict(from_attributes=True)

    id: int
    policy: Policy
    master_seed: int
    rounds: int
    created_at: datetime
    summary: ExperimentSummary


class ExperimentDetail(ExperimentOut):
    """Experimento con su configuración y todas sus rondas."""
    config: ExperimentConfig
    metrics: List[RoundMetrics]
