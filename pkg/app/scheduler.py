"""
Programación de dispositivos por ronda.

1. Se resuelve la relajación SOCP del problema dual descendente para obtener la
   prioridad s de cada dispositivo admisible.
2. Se admiten dispositivos en orden ascendente de s mientras el prefijo pase la
   prueba de factibilidad de subida (power_control.feasibility_test); el primer
   prefijo infactible detiene la admisión.
3. Los receptores del conjunto final son los MMSE con las potencias del punto fijo.

También incluye las políticas de referencia (aleatoria y completa), la SINR
descendente dual y el oráculo exhaustivo para K pequeño.

Incrustación real: un vector complejo de longitud N se representa con 2N reales
(partes reales y después imaginarias). Para u = a + jb y h = c + jd,
Re(u^H h) = [c; d]·[a; b] e Im(u^H h) = [d; -c]·[a; b].
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np

from app.channel import ChannelRealization
from app.errors import DomainError
from app.phy import BeamformerSet, PowerAllocation, SinrTargets, mmse_beamformers
from app.power_control import feasibility_test

logger = logging.getLogger(__name__)

SOLVER_TOL = 1e-10
TIE_DECIMALS = 6
REWEIGHT_EPSILON = 1e-3

STATUS_OPTIMAL = "optimal"
STATUS_NEAR_OPTIMAL = "near-optimal"
STATUS_FAILED = "failed"


## ------------------------- PROGRAMA CÓNICO ------------------------- ##

@dataclass(frozen=True)
class SocBlock:
    """Restricción de cono de segundo orden ||A z + b||_2 <= c^T z + d del dispositivo."""
    device: int
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0


@dataclass(frozen=True)
class EqualityBlock:
    """Restricción lineal a^T z = value (Im(m^_k^H h_k) = 0)."""
    device: int
    a: np.ndarray
    value: float = 0.0


@dataclass(frozen=True)
class PowerBlock:
    """Restricción de potencia total sum(z[indices]²) <= budget."""
    indices: np.ndarray
    budget: float


@dataclass(frozen=True)
class ConeProgram:
    """
    Programa cónico en forma estándar sobre el vector real z.

    Disposición de z: [x_0, ..., x_{K-1}, s_0, ..., s_{K-1}] con x_j (2N reales) la
    incrustación de u_j. Los haces duales son m^_j = amplitude_scale · u_j, con
    amplitude_scale = sqrt(P_sum / sigma²); así el presupuesto de potencia queda en 1
    y los coeficientes del programa están bien escalados.
    """
    devices: Tuple[int, ...]
    antenna_count: int
    objective: np.ndarray
    cones: Tuple[SocBlock, ...]
    equalities: Tuple[EqualityBlock, ...]
    power: Optional[PowerBlock]
    nonnegative: np.ndarray
    amplitude_scale: float
    fixed_slack: bool = False

    @classmethod
    def empty(cls) -> "ConeProgram":
        return cls(
            devices=(),
            antenna_count=0,
            objective=np.zeros(0),
            cones=(),
            equalities=(),
            power=None,
            nonnegative=np.zeros(0, dtype=int),
            amplitude_scale=1.0,
        )

    @property
    def is_empty(self) -> bool:
        return not self.devices

    @property
    def beam_length(self) -> int:
        return 2 * self.antenna_count

    @property
    def variable_count(self) -> int:
        return len(self.devices) * (self.beam_length + 1)

    def beam_slice(self, position: int) -> slice:
        return slice(position * self.beam_length, (position + 1) * self.beam_length)

    def slack_index(self, position: int) -> int:
        return len(self.devices) * self.beam_length + position

    def block_counts(self) -> Dict[str, int]:
        return {
            "cones": len(self.cones),
            "equalities": len(self.equalities),
            "power": 0 if self.power is None else 1,
            "nonnegative": int(self.nonnegative.size),
        }

    def embed(self, slacks: Sequence[float], dual_beamformers: np.ndarray) -> np.ndarray:
        """Construye z a partir de (s, m^); inversa exacta de `extract`."""
        dual_beamformers = np.asarray(dual_beamformers, dtype=complex)
        z = np.zeros(self.variable_count)
        for j in range(len(self.devices)):
            u = dual_beamformers[j] / self.amplitude_scale
            z[self.beam_slice(j)] = np.concatenate([u.real, u.imag])
        z[self.nonnegative] = np.asarray(slacks, dtype=float)
        return z

    def extract(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Devuelve (s, m^) desde el vector real z; m^ tiene forma (K, N)."""
        z = np.asarray(z, dtype=float)
        n = self.antenna_count
        beams = np.zeros((len(self.devices), n), dtype=complex)
        for j in range(len(self.devices)):
            x = z[self.beam_slice(j)]
            beams[j] = self.amplitude_scale * (x[:n] + 1j * x[n:])
        return z[self.nonnegative].copy(), beams

    def residuals(self, z: np.ndarray) -> Dict[str, float]:
        """Violación máxima de cada familia de restricciones en el punto z."""
        z = np.asarray(z, dtype=float)
        cone = max((max(0.0, np.linalg.norm(blk.A @ z + blk.b) - (blk.c @ z + blk.d)) for blk in self.cones), default=0.0)
        equality = max((abs(blk.a @ z - blk.value) for blk in self.equalities), default=0.0)
        power = 0.0 if self.power is None else max(0.0, float(np.sum(z[self.power.indices] ** 2)) - self.power.budget)
        slack = z[self.nonnegative]
        nonnegative = float(max(0.0, -slack.min())) if slack.size else 0.0
        result = {"cone": float(cone), "equality": float(equality), "power": float(power), "nonnegative": nonnegative}
        if self.fixed_slack:
            result["fixed_slack"] = float(np.max(np.abs(slack))) if slack.size else 0.0
        return result


@dataclass(frozen=True)
class PrioritySolution:
    """
    Salida de la relajación SOCP.

    Attributes:
        devices: dispositivos sobre los que se planteó el programa.
        slacks: s_k >= 0 alineado con `devices`.
        dual_beamformers: m^_k, forma (len(devices), N).
        objective: sum_k alpha_k s_k con los pesos originales.
        solver_status: "optimal", "near-optimal" o "failed".
    """
    devices: Tuple[int, ...]
    slacks: np.ndarray
    dual_beamformers: np.ndarray
    objective: float
    solver_status: str

    def slack_of(self, k: int) -> float:
        return float(self.slacks[self.devices.index(k)])


@dataclass(frozen=True)
class ScheduleResult:
    """
    Conjunto programado de una ronda.

    Attributes:
        scheduled: S en orden de admisión.
        powers: potencias del punto fijo (None en la política completa).
        beamformers: receptores MMSE de S.
        weighted_mass: sum_{k in S} alpha_k.
        priority: solución SOCP (sólo la política propuesta).
        policy: política que produjo el resultado.
        admission_trace: pares (dispositivo, factible) en el orden probado.
    """
    scheduled: Tuple[int, ...]
    powers: Optional[PowerAllocation]
    beamformers: BeamformerSet
    weighted_mass: float
    priority: Optional[PrioritySolution] = None
    policy: str = "proposed"
    admission_trace: Tuple[Tuple[int, bool], ...] = field(default_factory=tuple)

    @property
    def is_empty(self) -> bool:
        return not self.scheduled

    @property
    def solver_failed(self) -> bool:
        return self.priority is not None and self.priority.solver_status == STATUS_FAILED


@dataclass(frozen=True)
class DualFeasibility:
    """Factibilidad del sistema descendente dual con s = 0 y su potencia mínima (W)."""
    feasible: bool
    min_power: float
    solver_status: str


def _channel_matrix(channels: Union[ChannelRealization, np.ndarray]) -> np.ndarray:
    if isinstance(channels, ChannelRealization):
        return channels.vectors
    return np.asarray(channels, dtype=complex)


def _weighted_mass(scheduled: Iterable[int], weights: Sequence[float]) -> float:
    return float(sum(weights[k] for k in scheduled))


def _empty_result(policy: str, priority: Optional[PrioritySolution] = None, trace=()) -> ScheduleResult:
    return ScheduleResult(
        scheduled=(),
        powers=None,
        beamformers=BeamformerSet(),
        weighted_mass=0.0,
        priority=priority,
        policy=policy,
        admission_trace=tuple(trace),
    )


## ------------------------- OPERACIONES ------------------------- ##

def dual_sinr(
    k: int,
    dual_beamformers: Union[np.ndarray, Mapping[int, np.ndarray]],
    channels: Union[ChannelRealization, np.ndarray],
    scheduled: Optional[Iterable[int]] = None,
) -> float:
    """
    SINR descendente dual |m^_k^H h_k|² / (sum_{i in S, i != k} |m^_i^H h_k|² + 1).

    `dual_beamformers` puede ser una matriz indexada por dispositivo o un mapeo
    dispositivo -> vector; S por defecto son todas sus claves/filas.
    """
    H = _channel_matrix(channels)
    if isinstance(dual_beamformers, Mapping):
        beams = {i: np.asarray(v, dtype=complex) for i, v in dual_beamformers.items()}
    else:
        matrix = np.asarray(dual_beamformers, dtype=complex)
        beams = {i: matrix[i] for i in range(matrix.shape[0])}
    members = list(beams) if scheduled is None else list(scheduled)
    h_k = H[k]
    signal = np.abs(np.vdot(beams[k], h_k)) ** 2
    interference = sum(np.abs(np.vdot(beams[i], h_k)) ** 2 for i in members if i != k)
    return float(signal / (interference + 1.0))


def build_cone_program(
    devices: Sequence[int],
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    weights: Sequence[float],
    sum_power: float,
    sigma2: float,
    fixed_slack: bool = False,
) -> ConeProgram:
    """
    Construye el programa de prioridad sobre los dispositivos dados:

        minimizar   sum_k alpha_k s_k
        sujeto a    Re(m^_k^H h_k)/sqrt(gamma_k) + s_k >= sqrt(sum_{i != k} |m^_i^H h_k|² + 1)
                    Im(m^_k^H h_k) = 0
                    sum_k ||m^_k||² <= P_sum / sigma²,  s >= 0

    Con fixed_slack=True las holguras quedan fijadas a cero (sistema dual sobre S).

    Returns:
        ConeProgram; ConeProgram.empty() si no hay dispositivos.
    """
    devices = tuple(int(k) for k in devices)
    if not devices:
        return ConeProgram.empty()
    H = _channel_matrix(channels)
    n_antennas = H.shape[1]
    beam_length = 2 * n_antennas
    count = len(devices)
    n_vars = count * (beam_length + 1)
    scale = float(np.sqrt(sum_power / sigma2))
    gamma = targets.gamma(devices)

    def beam_slice(j):
        return slice(j * beam_length, (j + 1) * beam_length)

    cones = []
    equalities = []
    for j, k in enumerate(devices):
        g = scale * H[k]
        re_row = np.concatenate([g.real, g.imag])
        im_row = np.concatenate([g.imag, -g.real])

        c = np.zeros(n_vars)
        c[beam_slice(j)] = re_row / np.sqrt(gamma[j])
        c[count * beam_length + j] = 1.0

        others = [i for i in range(count) if i != j]
        A = np.zeros((2 * len(others) + 1, n_vars))
        for row, i in enumerate(others):
            A[2 * row, beam_slice(i)] = re_row
            A[2 * row + 1, beam_slice(i)] = im_row
        b = np.zeros(A.shape[0])
        b[-1] = 1.0
        cones.append(SocBlock(device=k, A=A, b=b, c=c, d=0.0))

        a = np.zeros(n_vars)
        a[beam_slice(j)] = im_row
        equalities.append(EqualityBlock(device=k, a=a))

    slack_indices = np.arange(count * beam_length, n_vars)
    objective = np.zeros(n_vars)
    objective[slack_indices] = [weights[k] for k in devices]
    return ConeProgram(
        devices=devices,
        antenna_count=n_antennas,
        objective=objective,
        cones=tuple(cones),
        equalities=tuple(equalities),
        power=PowerBlock(indices=np.arange(count * beam_length), budget=1.0),
        nonnegative=slack_indices,
        amplitude_scale=scale,
        fixed_slack=fixed_slack,
    )


def _constraints(program: ConeProgram, z: cp.Variable, include_power: bool = True) -> List:
    constraints = [cp.SOC(blk.c @ z + blk.d, blk.A @ z + blk.b) for blk in program.cones]
    constraints += [blk.a @ z == blk.value for blk in program.equalities]
    if include_power and program.power is not None:
        constraints.append(cp.sum_squares(z[program.power.indices]) <= program.power.budget)
    constraints.append(z[program.nonnegative] >= 0)
    if program.fixed_slack:
        constraints.append(z[program.nonnegative] == 0)
    return constraints


def _solve(problem: cp.Problem) -> str:
    try:
        problem.solve(
            solver=cp.CLARABEL,
            tol_feas=SOLVER_TOL,
            tol_gap_abs=SOLVER_TOL,
            tol_gap_rel=SOLVER_TOL,
        )
    except cp.error.SolverError as exc:
        logger.warning("✖ El solver cónico falló: %s", exc)
        return STATUS_FAILED
    if problem.status == cp.OPTIMAL:
        return STATUS_OPTIMAL
    if problem.status == cp.OPTIMAL_INACCURATE:
        return STATUS_NEAR_OPTIMAL
    return STATUS_FAILED


def solve_priority(
    program: ConeProgram,
    reweighted: bool = False,
    reweight_iterations: int = 3,
) -> PrioritySolution:
    """
    Resuelve el programa de prioridad con Clarabel (vía cvxpy).

    Args:
        program: programa de build_cone_program (no vacío).
        reweighted: activa el ℓ1 reponderado (pesos alpha_k / (s_k + 1e-3)).
        reweight_iterations: número máximo de resoluciones en modo reponderado.

    Returns:
        PrioritySolution; solver_status="failed" si el solver no produce solución.
    """
    if program.is_empty:
        raise DomainError("No se puede resolver un programa vacío")
    base_weights = program.objective[program.nonnegative]
    z = cp.Variable(program.variable_count)
    weights = cp.Parameter(len(program.devices), nonneg=True)
    problem = cp.Problem(cp.Minimize(weights @ z[program.nonnegative]), _constraints(program, z))

    weights.value = base_weights
    rounds = max(1, reweight_iterations) if reweighted else 1
    status = STATUS_FAILED
    best = None
    for iteration in range(rounds):
        current = _solve(problem)
        if current == STATUS_FAILED or z.value is None:
            if best is not None:
                logger.warning("⚠ Reponderación %d sin solución, se conserva la anterior", iteration + 1)
            break
        status, best = current, np.array(z.value, dtype=float)
        slacks = np.maximum(best[program.nonnegative], 0.0)
        weights.value = base_weights / (slacks + REWEIGHT_EPSILON)

    if best is None:
        count = len(program.devices)
        return PrioritySolution(
            devices=program.devices,
            slacks=np.full(count, np.nan),
            dual_beamformers=np.zeros((count, program.antenna_count), dtype=complex),
            objective=float("nan"),
            solver_status=STATUS_FAILED,
        )
    slacks, beams = program.extract(best)
    slacks = np.maximum(slacks, 0.0)
    return PrioritySolution(
        devices=program.devices,
        slacks=slacks,
        dual_beamformers=beams,
        objective=float(base_weights @ slacks),
        solver_status=status,
    )


def dual_feasibility(
    scheduled: Sequence[int],
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    sum_power: float,
    sigma2: float,
) -> DualFeasibility:
    """
    Potencia mínima del sistema descendente dual sobre S (holguras fijadas a 0).

    Minimiza sum_k ||m^_k||² sujeto a las restricciones de cono; la potencia de subida
    equivalente es sigma² sum_k ||m^_k||². S es factible si esa potencia cabe en P_sum.
    """
    program = build_cone_program(scheduled, channels, targets, np.zeros(_channel_matrix(channels).shape[0]), sum_power, sigma2, fixed_slack=True)
    if program.is_empty:
        raise DomainError("La factibilidad dual requiere un conjunto no vacío")
    z = cp.Variable(program.variable_count)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(z[program.power.indices])), _constraints(program, z, include_power=False))
    status = _solve(problem)
    if status == STATUS_FAILED:
        return DualFeasibility(feasible=False, min_power=float("inf"), solver_status=status)
    # sum ||m^||² = scale² sum ||u||² y sigma² scale² = P_sum
    min_power = float(sum_power * np.sum(z.value[program.power.indices] ** 2))
    return DualFeasibility(
        feasible=min_power <= sum_power * (1.0 + 1e-8),
        min_power=min_power,
        solver_status=status,
    )


def priority_order(devices: Sequence[int], slacks: Sequence[float], weights: Sequence[float]) -> List[int]:
    """
    Orden de admisión: s ascendente; empates (a 1e-6) por alpha_k descendente y
    después por índice de dispositivo.
    """
    keyed = [(round(float(s), TIE_DECIMALS), -float(weights[k]), int(k)) for k, s in zip(devices, slacks)]
    return [k for _, _, k in sorted(keyed)]


def fallback_order(devices: Sequence[int], channels: Union[ChannelRealization, np.ndarray]) -> List[int]:
    """Orden de reserva cuando falla el solver: canal más fuerte primero."""
    H = _channel_matrix(channels)
    return sorted(devices, key=lambda k: (-float(np.linalg.norm(H[k])), k))


def _greedy_prefix(
    order: Sequence[int],
    channels,
    targets: SinrTargets,
    sum_power: float,
    sigma2: float,
):
    scheduled: List[int] = []
    trace = []
    report = None
    for k in order:
        candidate = scheduled + [k]
        attempt = feasibility_test(candidate, channels, targets, sum_power, sigma2)
        trace.append((k, attempt.feasible))
        if not attempt.feasible:
            break
        scheduled = candidate
        report = attempt
    return scheduled, report, trace


def _finalize(scheduled, report, channels, weights, sigma2, policy, priority=None, trace=()) -> ScheduleResult:
    if not scheduled:
        return _empty_result(policy, priority, trace)
    return ScheduleResult(
        scheduled=tuple(scheduled),
        powers=report.powers,
        beamformers=mmse_beamformers(scheduled, channels, report.powers, sigma2),
        weighted_mass=_weighted_mass(scheduled, weights),
        priority=priority,
        policy=policy,
        admission_trace=tuple(trace),
    )


def schedule_round(
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    weights: Sequence[float],
    sum_power: float,
    sigma2: float,
    reweighted: bool = False,
    reweight_iterations: int = 3,
) -> ScheduleResult:
    """
    Política propuesta: prioridad SOCP + admisión voraz con prueba de factibilidad.

    Un resultado vacío indica que la ronda debe aplazarse.
    """
    admissible = targets.admissible
    if not admissible:
        return _empty_result("proposed")

    program = build_cone_program(admissible, channels, targets, weights, sum_power, sigma2)
    priority = solve_priority(program, reweighted=reweighted, reweight_iterations=reweight_iterations)
    if priority.solver_status == STATUS_FAILED:
        logger.warning("⚠ Prioridad SOCP no disponible, se usa el orden por ganancia de canal")
        order = fallback_order(admissible, channels)
    else:
        order = priority_order(priority.devices, priority.slacks, weights)

    scheduled, report, trace = _greedy_prefix(order, channels, targets, sum_power, sigma2)
    return _finalize(scheduled, report, channels, weights, sigma2, "proposed", priority, trace)


def random_policy(
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    weights: Sequence[float],
    sum_power: float,
    sigma2: float,
    rng: np.random.Generator,
    attempts: int = 20,
) -> ScheduleResult:
    """
    Política aleatoria: tamaño y miembros uniformes entre los admisibles, repetido
    hasta `attempts` veces hasta pasar la prueba de factibilidad. Si ningún intento
    pasa, se devuelve el mayor prefijo factible de una permutación aleatoria.
    """
    admissible = np.asarray(targets.admissible, dtype=int)
    if admissible.size == 0:
        return _empty_result("random")

    for _ in range(attempts):
        size = int(rng.integers(1, admissible.size + 1))
        members = [int(k) for k in rng.choice(admissible, size=size, replace=False)]
        report = feasibility_test(members, channels, targets, sum_power, sigma2)
        if report.feasible:
            return _finalize(members, report, channels, weights, sigma2, "random", trace=[(k, True) for k in members])

    order = [int(k) for k in rng.permutation(admissible)]
    scheduled, report, trace = _greedy_prefix(order, channels, targets, sum_power, sigma2)
    return _finalize(scheduled, report, channels, weights, sigma2, "random", trace=trace)


def full_policy(device_count: int, weights: Optional[Sequence[float]] = None) -> ScheduleResult:
    """Política completa: todos los dispositivos, sin restricciones inalámbricas."""
    scheduled = tuple(range(device_count))
    mass = 1.0 if weights is None else _weighted_mass(scheduled, weights)
    return ScheduleResult(
        scheduled=scheduled,
        powers=None,
        beamformers=BeamformerSet(),
        weighted_mass=mass,
        policy="full",
    )


def exhaustive_schedule(
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    weights: Sequence[float],
    sum_power: float,
    sigma2: float,
) -> ScheduleResult:
    """
    Mejor conjunto factible por enumeración de todos los subconjuntos admisibles.
    Coste exponencial: pensado como oráculo para K pequeño.
    """
    admissible = targets.admissible
    best: Tuple[float, List[int], object] = (0.0, [], None)
    for size in range(1, len(admissible) + 1):
        for subset in itertools.combinations(admissible, size):
            mass = _weighted_mass(subset, weights)
            if mass <= best[0]:
                continue
            report = feasibility_test(subset, channels, targets, sum_power, sigma2)
            if report.feasible:
                best = (mass, list(subset), report)
    _, scheduled, report = best
    return _finalize(scheduled, report, channels, weights, sigma2, "exhaustive")
