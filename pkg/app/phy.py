"""
Capa física determinista: ruido, SINR de subida, tasa, latencias, objetivos de
SINR y receptores MMSE.

Todas las potencias internas están en vatios; las conversiones dB/dBm sólo se
hacen al leer la configuración (PhyConfig.noise_power_w).
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import cho_factor, cho_solve

from app.channel import ChannelRealization, dbm_to_watts
from app.errors import DomainError

INFINITE_LATENCY = float("inf")


## ------------------------- CONFIGURACIÓN ------------------------- ##

class PhyConfig(BaseModel):
    """
    Constantes físicas de la subida. Todos los valores lineales son estrictamente
    positivos; noise_psd se expresa en dBm/Hz.
    """
    model_config = ConfigDict(frozen=True, protected_namespaces=())

    bandwidth: float = Field(10e6, gt=0)  # B, Hz
    noise_psd: float = -174.0  # N0, dBm/Hz
    bits_per_param: int = Field(32, ge=1)  # I
    model_dim: int = Field(30720, ge=1)  # d transmitido por el enlace
    per_sample_compute_time: float = Field(1e-4, gt=0)  # R / f_k^cap, s
    latency_threshold: float = Field(1.0, gt=0)  # T^thr, s
    sum_power: float = Field(0.03, gt=0)  # P_sum, W

    @property
    def noise_power_w(self) -> float:
        return noise_power(self)

    @property
    def payload_bits(self) -> float:
        return float(self.bits_per_param) * float(self.model_dim)


## ------------------------- TIPOS ------------------------- ##

@dataclass(frozen=True)
class PowerAllocation:
    """Potencias de transmisión p_k en vatios, una por dispositivo (K,)."""
    powers: np.ndarray

    def __post_init__(self):
        powers = np.asarray(self.powers, dtype=float)
        if np.any(powers < 0) or not np.all(np.isfinite(powers)):
            raise DomainError("Las potencias deben ser finitas y no negativas")
        object.__setattr__(self, "powers", powers)

    def total(self, scheduled: Optional[Iterable[int]] = None) -> float:
        if scheduled is None:
            return float(self.powers.sum())
        return float(self.powers[list(scheduled)].sum())


@dataclass(frozen=True)
class BeamformerSet:
    """Receptores m_k de norma unidad, indexados por dispositivo."""
    receive: Dict[int, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.receive[k]

    def __contains__(self, k: int) -> bool:
        return k in self.receive


@dataclass(frozen=True)
class SinrTargets:
    """
    Objetivos de SINR gamma_k = 2^{r_k} - 1 de los dispositivos admisibles.

    Los dispositivos con T_k^loc >= T^thr quedan en `inadmissible` y nunca entran
    en un conjunto programado.
    """
    targets: Dict[int, float]
    required_rates: Dict[int, float]
    inadmissible: FrozenSet[int] = frozenset()

    @property
    def admissible(self) -> List[int]:
        return sorted(self.targets)

    def gamma(self, devices: Sequence[int]) -> np.ndarray:
        return np.array([self.targets[k] for k in devices], dtype=float)

    def restricted_to(self, devices: Iterable[int]) -> "SinrTargets":
        keep = [k for k in devices if k in self.targets]
        return SinrTargets(
            targets={k: self.targets[k] for k in keep},
            required_rates={k: self.required_rates[k] for k in keep},
            inadmissible=self.inadmissible,
        )


PowerLike = Union[PowerAllocation, Sequence[float], np.ndarray]


def _as_powers(p: PowerLike) -> np.ndarray:
    if isinstance(p, PowerAllocation):
        return p.powers
    return np.asarray(p, dtype=float)


def _as_matrix(channels: Union[ChannelRealization, np.ndarray]) -> np.ndarray:
    if isinstance(channels, ChannelRealization):
        return channels.vectors
    return np.asarray(channels, dtype=complex)


## ------------------------- OPERACIONES ------------------------- ##

def noise_power(cfg: PhyConfig) -> float:
    """sigma² = B · N0 en vatios."""
    return float(cfg.bandwidth * dbm_to_watts(cfg.noise_psd))


def sinr_uplink(
    k: int,
    channels: Union[ChannelRealization, np.ndarray],
    m: Union[BeamformerSet, np.ndarray],
    p: PowerLike,
    scheduled: Iterable[int],
    sigma2: float,
) -> float:
    """
    SINR de subida del dispositivo k con receptor m_k:

        p_k |m_k^H h_k|² / (sum_{i in S, i != k} p_i |m_k^H h_i|² + sigma²)

    Raises:
        DomainError: si k no pertenece a S.
    """
    scheduled = list(scheduled)
    if k not in scheduled:
        raise DomainError(f"El dispositivo {k} no está en el conjunto programado")
    H = _as_matrix(channels)
    powers = _as_powers(p)
    m_k = m[k] if isinstance(m, BeamformerSet) else np.asarray(m, dtype=complex)
    others = [i for i in scheduled if i != k]
    signal = powers[k] * np.abs(np.vdot(m_k, H[k])) ** 2
    interference = float(np.sum(powers[others] * np.abs(H[others].conj() @ m_k) ** 2)) if others else 0.0
    # Ruido tras el receptor: sigma² ||m_k||² (igual a sigma² para m_k unitario)
    noise = sigma2 * float(np.vdot(m_k, m_k).real)
    return float(signal / (interference + noise))


def uplink_rate(sinr: float, bandwidth: float) -> float:
    """Tasa de subida B log2(1 + SINR) en bit/s."""
    if sinr < 0:
        raise DomainError("El SINR no puede ser negativo")
    return float(bandwidth * np.log2(1.0 + sinr))


def local_latency(k: int, samples: int, cfg: PhyConfig) -> float:
    """Latencia de cómputo local T_k^loc = n_k R / f_k^cap."""
    if samples < 0:
        raise DomainError("El número de muestras no puede ser negativo")
    return float(samples * cfg.per_sample_compute_time)


def uplink_latency(sinr: float, cfg: PhyConfig) -> float:
    """T_k^ul = I d / (B log2(1 + SINR)); SINR = 0 devuelve latencia infinita."""
    if sinr < 0:
        raise DomainError("El SINR no puede ser negativo")
    rate = uplink_rate(sinr, cfg.bandwidth)
    if rate <= 0:
        return INFINITE_LATENCY
    return float(cfg.payload_bits / rate)


def system_latency(scheduled: Iterable[int], local: Mapping[int, float], uplink: Mapping[int, float]) -> float:
    """T^sys = max_{k in S} (T_k^loc + T_k^ul)."""
    scheduled = list(scheduled)
    if not scheduled:
        raise DomainError("La latencia del sistema requiere un conjunto no vacío")
    return float(max(local[k] + uplink[k] for k in scheduled))


def sinr_targets(cfg: PhyConfig, local_latencies: Mapping[int, float]) -> SinrTargets:
    """
    Calcula r_k = I d / (B (T^thr - T_k^loc)) y gamma_k = 2^{r_k} - 1.

    Los dispositivos sin presupuesto de tiempo (T_k^loc >= T^thr) se marcan como
    inadmisibles en lugar de recibir un objetivo infinito.
    """
    targets: Dict[int, float] = {}
    rates: Dict[int, float] = {}
    inadmissible = set()
    for k, t_loc in local_latencies.items():
        budget = cfg.latency_threshold - t_loc
        if budget <= 0:
            inadmissible.add(k)
            continue
        r_k = cfg.payload_bits / (cfg.bandwidth * budget)
        rates[k] = float(r_k)
        targets[k] = float(np.expm1(r_k * np.log(2.0)))
    return SinrTargets(targets=targets, required_rates=rates, inadmissible=frozenset(inadmissible))


def mmse_beamformers(
    scheduled: Iterable[int],
    channels: Union[ChannelRealization, np.ndarray],
    p: PowerLike,
    sigma2: float,
) -> BeamformerSet:
    """
    Receptores MMSE m_k ∝ (sigma² I + sum_{i in S} p_i h_i h_i^H)^{-1} h_k, normalizados
    a norma euclídea unidad.

    La covarianza es hermítica definida positiva (sigma² > 0), así que se resuelve
    con una factorización de Cholesky en lugar de invertirla.
    """
    scheduled = list(scheduled)
    if not scheduled:
        return BeamformerSet()
    H = _as_matrix(channels)
    powers = _as_powers(p)
    if np.any(powers[scheduled] < 0):
        raise DomainError("Las potencias programadas deben ser no negativas")
    H_s = H[scheduled]  # (|S|, N)
    n_antennas = H.shape[1]
    covariance = sigma2 * np.eye(n_antennas, dtype=complex) + (H_s.T * powers[scheduled]) @ H_s.conj()
    factor = cho_factor(covariance, lower=True)
    solved = cho_solve(factor, H_s.T)  # columnas: Sigma^{-1} h_k
    receive = {}
    for column, k in enumerate(scheduled):
        v = solved[:, column]
        receive[k] = v / np.linalg.norm(v)
    return BeamformerSet(receive=receive)


def round_latencies(
    scheduled: Iterable[int],
    channels: Union[ChannelRealization, np.ndarray],
    p: PowerLike,
    beamformers: BeamformerSet,
    local: Mapping[int, float],
    cfg: PhyConfig,
    sigma2: float,
) -> Dict[int, float]:
    """Latencia total T_k^loc + T_k^ul de cada dispositivo programado."""
    scheduled = list(scheduled)
    totals = {}
    for k in scheduled:
        sinr = sinr_uplink(k, channels, beamformers, p, scheduled, sigma2)
        totals[k] = local[k] + uplink_latency(sinr, cfg)
    return totals
