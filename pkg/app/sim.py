"""
Orquestación de experimentos: preparación (datos, reparto, topología, objetivos
de SINR, constantes de la cota), bucle de rondas programar -> actualizar ->
agregar, comparación de políticas y fichero de métricas.

Semillas: todo sale de `master_seed` a través de channel.round_seed. La
preparación usa la ronda 0 (un flujo por fuente) y la ronda t usa
(t, intento, 0) para el canal y (t, intento, 1) para la política aleatoria, de
modo que políticas distintas con la misma semilla ven los mismos canales.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app import fl
from app.channel import ChannelRealization, Topology, draw_channels, draw_topology, round_seed
from app.errors import DomainError, InvariantViolation, PostponementLimitError, SolverFailureError
from app.phy import PhyConfig, SinrTargets, local_latency, mmse_beamformers, round_latencies, sinr_targets
from app.schemas import (
    METRIC_COLUMNS,
    POLICIES,
    ExperimentConfig,
    ExperimentRecord,
    ExperimentSummary,
    RoundMetrics,
)
from app.scheduler import ScheduleResult, full_policy, random_policy, schedule_round

logger = logging.getLogger(__name__)

# Flujos de la ronda 0 (preparación)
STREAM_DATASET = 10
STREAM_PARTITION = 11
STREAM_TOPOLOGY = 12
# Flujos de cada ronda
STREAM_CHANNEL = 0
STREAM_RANDOM_POLICY = 1

IDENTITY_TOL = 1e-10
RESIDUAL_BOUND_TOL = 1e-6
DESCENT_TOL = 1e-8
SOLVER_FAILURE_LIMIT = 0.5
SOLVER_FAILURE_MIN_ROUNDS = 10


@dataclass(frozen=True)
class ExperimentSetup:
    """Todo lo que se fija antes de la primera ronda."""
    config: ExperimentConfig
    dataset: fl.Dataset
    shards: List[fl.DataShard]
    weights: np.ndarray
    topology: Topology
    phy: PhyConfig
    sigma2: float
    local_latencies: Dict[int, float]
    targets: SinrTargets
    estimate: fl.SmoothnessEstimate
    step_size: float
    initial_loss: float
    optimal_loss: float


## ------------------------- PREPARACIÓN ------------------------- ##

def build_dataset(config: ExperimentConfig) -> fl.Dataset:
    """Conjunto externo si hay dataset_path; si no, el sintético sembrado."""
    if config.dataset_path:
        return fl.load_dataset(config.dataset_path, num_classes=config.num_classes)
    return fl.make_synthetic_dataset(
        sample_count=config.sample_count,
        feature_dim=config.feature_dim,
        num_classes=config.num_classes,
        class_separation=config.class_separation,
        seed=round_seed(config.master_seed, 0, 0, STREAM_DATASET),
    )


def prepare_experiment(config: ExperimentConfig, dataset: Optional[fl.Dataset] = None) -> ExperimentSetup:
    """
    Prepara datos, reparto no iid, topología, objetivos de SINR y las constantes
    de la cota (L, kappa, varsigma = min(eta, 1/L), F(w_0), F(w*)).
    """
    dataset = dataset if dataset is not None else build_dataset(config)
    shards = fl.partition_noniid(dataset, config.device_count, round_seed(config.master_seed, 0, 0, STREAM_PARTITION))
    weights = fl.shard_weights(shards)
    topology = draw_topology(
        config.device_count,
        config.inner_radius,
        config.outer_radius,
        round_seed(config.master_seed, 0, 0, STREAM_TOPOLOGY),
    )
    phy = config.phy()
    local = {shard.owner: local_latency(shard.owner, shard.size, phy) for shard in shards}
    targets = sinr_targets(phy, local)
    if targets.inadmissible:
        logger.info("⚠ %d dispositivos sin presupuesto de latencia: %s", len(targets.inadmissible), sorted(targets.inadmissible))

    estimate = fl.estimate_smoothness_and_kappa(dataset.design, dataset.labels, dataset.num_classes)
    step_size = min(config.learning_rate, 1.0 / estimate.smoothness)
    initial_loss = fl.loss_and_gradient(fl.zero_model(dataset), dataset)[0]
    optimal_loss = fl.estimate_optimal_loss(dataset)
    return ExperimentSetup(
        config=config,
        dataset=dataset,
        shards=shards,
        weights=weights,
        topology=topology,
        phy=phy,
        sigma2=phy.noise_power_w,
        local_latencies=local,
        targets=targets,
        estimate=estimate,
        step_size=step_size,
        initial_loss=initial_loss,
        optimal_loss=optimal_loss,
    )


## ------------------------- RONDA ------------------------- ##

def _apply_policy(setup: ExperimentSetup, channels: ChannelRealization, round_index: int, attempt: int) -> ScheduleResult:
    config = setup.config
    if config.policy == "full":
        return full_policy(config.device_count, setup.weights)
    if config.policy == "random":
        rng = np.random.default_rng(round_seed(config.master_seed, round_index, attempt, STREAM_RANDOM_POLICY))
        return random_policy(
            channels, setup.targets, setup.weights, config.sum_power, setup.sigma2, rng, attempts=config.random_attempts
        )
    return schedule_round(
        channels,
        setup.targets,
        setup.weights,
        config.sum_power,
        setup.sigma2,
        reweighted=config.reweighted,
        reweight_iterations=config.reweight_iterations,
    )


def schedule_with_postponement(setup: ExperimentSetup, round_index: int) -> Tuple[ScheduleResult, int, ChannelRealization]:
    """
    Programa la ronda; si S sale vacío la ronda se aplaza, se sortea un canal nuevo
    con el siguiente intento y el índice de ronda no avanza.

    Returns:
        (resultado, número de aplazamientos, canal usado).
    """
    config = setup.config
    for attempt in range(config.max_postponements + 1):
        channels = draw_channels(
            setup.topology,
            config.antenna_count,
            round_seed(config.master_seed, round_index, attempt, STREAM_CHANNEL),
            round_index=round_index,
        )
        schedule = _apply_policy(setup, channels, round_index, attempt)
        if not schedule.is_empty:
            return schedule, attempt, channels
        logger.info("⚠ Ronda %d aplazada (intento %d): ningún dispositivo programado", round_index, attempt)
    raise PostponementLimitError(
        f"La ronda {round_index} se aplazó {config.max_postponements} veces sin programar dispositivos"
    )


def _system_latency(setup: ExperimentSetup, schedule: ScheduleResult, channels: ChannelRealization) -> float:
    scheduled = list(schedule.scheduled)
    if schedule.powers is None:
        # Política completa: potencia uniforme y receptores MMSE, sólo informativo
        powers = np.zeros(channels.device_count)
        powers[scheduled] = setup.config.sum_power / len(scheduled)
        beams = mmse_beamformers(scheduled, channels, powers, setup.sigma2)
    else:
        powers = schedule.powers.powers
        beams = schedule.beamformers
    totals = round_latencies(scheduled, channels, powers, beams, setup.local_latencies, setup.phy, setup.sigma2)
    return float(max(totals.values()))


def _check_round(
    round_index: int,
    check: fl.ResidualCheck,
    w_prev: np.ndarray,
    setup: ExperimentSetup,
    gap_term: float,
    loss_prev: float,
    loss_new: float,
    grad_norm_sq: float,
    residual_norm_sq: float,
):
    limit = IDENTITY_TOL * (1.0 + float(np.linalg.norm(w_prev)))
    if check.identity_residual > limit:
        raise InvariantViolation(
            f"Ronda {round_index}: identidad de agregación {check.identity_residual:.3e} > {limit:.3e}"
        )
    bound = 4.0 * setup.estimate.kappa_analytic * gap_term + RESIDUAL_BOUND_TOL
    if residual_norm_sq > bound:
        raise InvariantViolation(f"Ronda {round_index}: ||e_t||² = {residual_norm_sq:.3e} supera 4 kappa gap = {bound:.3e}")
    slack = fl.descent_gap(loss_prev, loss_new, grad_norm_sq, residual_norm_sq, setup.step_size)
    if slack < -DESCENT_TOL * max(1.0, abs(loss_prev)):
        raise InvariantViolation(f"Ronda {round_index}: desigualdad de descenso violada por {-slack:.3e}")


## ------------------------- EXPERIMENTO ------------------------- ##

def summarize(setup: ExperimentSetup, rounds: Sequence[RoundMetrics], solver_failures: int) -> ExperimentSummary:
    """Resumen recalculable a partir de las rondas y las constantes de la preparación."""
    if not rounds:
        raise DomainError("No hay rondas que resumir")
    bound_inputs = fl.BoundInputs(
        smoothness=setup.estimate.smoothness,
        gradient_bound=setup.estimate.kappa_analytic,
        step_size=setup.step_size,
        initial_loss=setup.initial_loss,
        optimal_loss_estimate=setup.optimal_loss,
        round_count=len(rounds),
    )
    return ExperimentSummary(
        completed_rounds=len(rounds),
        final_loss=rounds[-1].loss,
        final_accuracy=rounds[-1].accuracy,
        mean_weighted_mass=float(np.mean([m.weighted_mass for m in rounds])),
        theorem_bound=fl.theorem_bound(bound_inputs, [m.gap_term for m in rounds]),
        measured_avg_grad_norm_sq=float(np.mean([m.grad_norm_sq for m in rounds])),
        smoothness=setup.estimate.smoothness,
        kappa_analytic=setup.estimate.kappa_analytic,
        kappa_empirical=setup.estimate.kappa_empirical,
        step_size=setup.step_size,
        initial_loss=setup.initial_loss,
        optimal_loss_estimate=setup.optimal_loss,
        postponed_rounds=int(sum(m.postponements for m in rounds)),
        solver_failures=solver_failures,
    )


def run_experiment(config: ExperimentConfig, dataset: Optional[fl.Dataset] = None) -> ExperimentRecord:
    """
    Ejecuta tau rondas de (programar -> actualización local -> agregación) y registra
    RoundMetrics en cada una. Determinista dada master_seed.

    Raises:
        InvariantViolation: si falla una comprobación en línea (check_invariants).
        PostponementLimitError: si una ronda agota los aplazamientos.
        SolverFailureError: si el solver cónico falla en más de la mitad de las rondas.
    """
    setup = prepare_experiment(config, dataset)
    logger.info(
        "Experimento %s: K=%d, N=%d, tau=%d, varsigma=%.3e, L=%.3e",
        config.policy, config.device_count, config.antenna_count, config.rounds, setup.step_size,
        setup.estimate.smoothness,
    )
    w = fl.zero_model(setup.dataset)
    loss_prev = setup.initial_loss
    rounds: List[RoundMetrics] = []
    solver_failures = 0

    for t in range(1, config.rounds + 1):
        schedule, postponements, channels = schedule_with_postponement(setup, t)
        if schedule.solver_failed:
            solver_failures += 1
        if t >= min(SOLVER_FAILURE_MIN_ROUNDS, config.rounds) and solver_failures > SOLVER_FAILURE_LIMIT * t:
            raise SolverFailureError(f"El solver falló en {solver_failures} de {t} rondas")

        check = fl.residual(w, setup.shards, setup.weights, schedule.scheduled, setup.step_size)
        w_new = check.aggregated
        loss_new = fl.loss_and_gradient(w_new, setup.dataset)[0]
        grad_norm_sq = float(check.full_gradient @ check.full_gradient)
        residual_norm_sq = float(check.residual @ check.residual)
        gap_term = float(min(1.0, max(0.0, 1.0 - schedule.weighted_mass)) ** 2)

        if config.check_invariants:
            _check_round(t, check, w, setup, gap_term, loss_prev, loss_new, grad_norm_sq, residual_norm_sq)

        rounds.append(RoundMetrics(
            round=t,
            policy=config.policy,
            loss=loss_new,
            accuracy=fl.accuracy(w_new, setup.dataset),
            weighted_mass=schedule.weighted_mass,
            scheduled_count=len(schedule.scheduled),
            residual_norm_sq=residual_norm_sq,
            gap_term=gap_term,
            system_latency=_system_latency(setup, schedule, channels),
            grad_norm_sq=grad_norm_sq,
            postponements=postponements,
        ))
        w, loss_prev = w_new, loss_new

    summary = summarize(setup, rounds, solver_failures)
    logger.info(
        "✔ Experimento %s completado: pérdida final %.5f, masa media %.3f, cota %.4e >= media %.4e",
        config.policy, summary.final_loss, summary.mean_weighted_mass, summary.theorem_bound,
        summary.measured_avg_grad_norm_sq,
    )
    return ExperimentRecord(config=config, rounds=rounds, summary=summary)


def run_comparison(config: ExperimentConfig, policies: Sequence[str] = POLICIES) -> Dict[str, ExperimentRecord]:
    """
    Ejecuta las políticas con la misma semilla maestra: mismos datos, reparto,
    topología y canales por ronda, así que la comparación es pareada.
    """
    dataset = build_dataset(config)
    return {
        policy: run_experiment(config.model_copy(update={"policy": policy}), dataset=dataset)
        for policy in policies
    }


## ------------------------- FICHERO DE MÉTRICAS ------------------------- ##

SUMMARY_MARKER = "# summary"


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics(records: Union[ExperimentRecord, Sequence[ExperimentRecord]], path: Union[str, Path]) -> Path:
    """
    Escribe la tabla de métricas en CSV: cabecera con METRIC_COLUMNS, una fila por
    ronda (las políticas en el orden recibido) y un bloque de resumen al final con
    líneas `# <policy>.<campo>=<valor>`.

    Los floats se escriben con repr, así que la lectura los reproduce exactamente.
    """
    if isinstance(records, ExperimentRecord):
        records = [records]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
            for record in records:
                for metrics in record.rounds:
                    row = metrics.model_dump()
                    writer.writerow([_format(row[column]) for column in METRIC_COLUMNS])
            handle.write(SUMMARY_MARKER + "\n")
            for record in records:
                for key, value in record.summary.model_dump().items():
                    handle.write(f"# {record.config.policy}.{key}={_format(value)}\n")
    except OSError as exc:
        raise DomainError(f"No se puede escribir el fichero de métricas {path}: {exc}") from exc
    return path


def read_metrics(path: Union[str, Path]) -> Tuple[List[RoundMetrics], Dict[str, Dict[str, str]]]:
    """Lee un fichero de write_metrics: (filas, {policy: {campo: valor}})."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    table = [line for line in lines if not line.startswith("#")]
    summary: Dict[str, Dict[str, str]] = {}
    for line in lines:
        if line.startswith("# ") and "=" in line and line != SUMMARY_MARKER:
            key, value = line[2:].split("=", 1)
            policy, field_name = key.split(".", 1)
            summary.setdefault(policy, {})[field_name] = value
    reader = csv.DictReader(table)
    rows = [RoundMetrics(**row) for row in reader]
    return rows, summary
