"""
Prueba de factibilidad de subida por iteración de punto fijo normalizada.

Para un conjunto candidato S se itera

    p~_k = gamma_k / (h_k^H Sigma_k^{-1} h_k),  Sigma_k = sum_{i in S, i != k} p_i h_i h_i^H + sigma² I
    p_k <- P_sum p~_k / sum_i p~_i

hasta que el vector normalizado converge. S es factible si una actualización más
sin normalizar en el punto fijo cabe en el presupuesto (sum p~_k <= P_sum), es
decir, si el factor de escala de la normalización es >= 1.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from app.channel import ChannelRealization
from app.errors import DomainError
from app.phy import PowerAllocation, SinrTargets

logger = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-9
MAX_ITERATIONS = 1000
BOUNDARY_TOL = 1e-8


@dataclass(frozen=True)
class FeasibilityReport:
    """
    Resultado de la prueba de factibilidad.

    Attributes:
        feasible: True si S cumple los objetivos de SINR dentro de P_sum.
        powers: p~ en el punto fijo si es factible; si no, el último vector normalizado.
        normalized_powers: punto fijo normalizado (suma P_sum).
        required_total: sum_k p~_k en el punto fijo.
        iterations: iteraciones realizadas.
        converged: si el vector normalizado convergió antes del límite.
    """
    feasible: bool
    powers: PowerAllocation
    normalized_powers: np.ndarray
    required_total: float
    iterations: int
    converged: bool


def _channel_matrix(channels: Union[ChannelRealization, np.ndarray]) -> np.ndarray:
    if isinstance(channels, ChannelRealization):
        return channels.vectors
    return np.asarray(channels, dtype=complex)


def required_powers(
    scheduled: Sequence[int],
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    p: np.ndarray,
    sigma2: float,
) -> np.ndarray:
    """
    Evalúa una vez la función de interferencia estándar p~(p) sobre S.

    Con Sigma = sigma² I + sum_{i in S} p_i h_i h_i^H y q_k = h_k^H Sigma^{-1} h_k, la
    identidad de Sherman-Morrison da h_k^H Sigma_k^{-1} h_k = q_k / (1 - p_k q_k).

    Returns:
        Vector (K,) con p~_k en las posiciones de S y ceros en el resto.
    """
    H = _channel_matrix(channels)
    scheduled = list(scheduled)
    p = np.asarray(p, dtype=float)
    H_s = H[scheduled]
    p_s = p[scheduled]
    covariance = sigma2 * np.eye(H.shape[1], dtype=complex) + (H_s.T * p_s) @ H_s.conj()
    solved = cho_solve(cho_factor(covariance, lower=True), H_s.T)
    q = np.real(np.einsum("kn,nk->k", H_s.conj(), solved))
    residual = 1.0 - p_s * q
    effective = np.empty_like(q)
    stable = residual > 1e-9
    effective[stable] = q[stable] / residual[stable]
    # Con SNR muy alta se pierde precisión en 1 - p_k q_k; se recalcula sin el término k
    for j in np.flatnonzero(~stable):
        others = [i for i in range(len(scheduled)) if i != j]
        sigma_k = sigma2 * np.eye(H.shape[1], dtype=complex) + (H_s[others].T * p_s[others]) @ H_s[others].conj()
        effective[j] = np.real(np.vdot(H_s[j], cho_solve(cho_factor(sigma_k, lower=True), H_s[j])))
    required = np.zeros(H.shape[0])
    required[scheduled] = targets.gamma(scheduled) / effective
    return required


def feasibility_test(
    scheduled: Iterable[int],
    channels: Union[ChannelRealization, np.ndarray],
    targets: SinrTargets,
    sum_power: float,
    sigma2: float,
    initial_powers: Optional[Sequence[float]] = None,
    tol: float = CONVERGENCE_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> FeasibilityReport:
    """
    Comprueba si S puede cumplir sus objetivos de SINR con receptores MMSE y
    potencia total <= P_sum.

    Args:
        scheduled: conjunto candidato S (no vacío, todos admisibles).
        channels: realización de canal de la ronda.
        targets: objetivos gamma_k.
        sum_power: presupuesto P_sum en vatios.
        sigma2: potencia de ruido en vatios.
        initial_powers: asignación inicial sobre S (por defecto uniforme P_sum/|S|);
            se reescala para sumar P_sum.
        tol: cambio relativo (norma infinito) del vector normalizado para declarar convergencia.
        max_iterations: límite de iteraciones.

    Returns:
        FeasibilityReport.
    """
    scheduled = list(scheduled)
    if not scheduled:
        raise DomainError("La prueba de factibilidad requiere un conjunto no vacío")
    missing = [k for k in scheduled if k not in targets.targets]
    if missing:
        raise DomainError(f"Dispositivos no admisibles en el conjunto candidato: {missing}")

    H = _channel_matrix(channels)
    p = np.zeros(H.shape[0])
    if initial_powers is None:
        p[scheduled] = sum_power / len(scheduled)
    else:
        start = np.asarray(initial_powers, dtype=float)
        if start.shape != (len(scheduled),) or np.any(start <= 0):
            raise DomainError("La asignación inicial debe ser positiva y tener |S| elementos")
        p[scheduled] = sum_power * start / start.sum()

    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        tilde = required_powers(scheduled, H, targets, p, sigma2)
        updated = sum_power * tilde / tilde[scheduled].sum()
        change = np.max(np.abs(updated[scheduled] - p[scheduled])) / np.max(updated[scheduled])
        p = updated
        if change < tol:
            converged = True
            break

    if not converged:
        logger.warning("⚠ El punto fijo no convergió en %d iteraciones (|S|=%d)", max_iterations, len(scheduled))
        return FeasibilityReport(
            feasible=False,
            powers=PowerAllocation(p),
            normalized_powers=p,
            required_total=float("nan"),
            iterations=iterations,
            converged=False,
        )

    tilde = required_powers(scheduled, H, targets, p, sigma2)
    required_total = float(tilde[scheduled].sum())
    feasible = required_total <= sum_power * (1.0 + BOUNDARY_TOL)
    return FeasibilityReport(
        feasible=feasible,
        powers=PowerAllocation(tilde if feasible else p),
        normalized_powers=p,
        required_total=required_total,
        iterations=iterations,
        converged=True,
    )
