"""
Topología de la red y realizaciones de canal por ronda.

Los dispositivos se colocan una vez por experimento (topología estática) y el
canal se vuelve a sortear en cada ronda (desvanecimiento plano por bloques).
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

from app.errors import DomainError

# Modelo de pérdidas de trayecto: beta_k = -35.3 - 37.6 log10(d_k) dB
PATH_LOSS_INTERCEPT_DB = -35.3
PATH_LOSS_SLOPE_DB = 37.6


## ------------------------- TIPOS ------------------------- ##

@dataclass(frozen=True)
class Topology:
    """
    Posición de los K dispositivos, descrita por su distancia al servidor.

    Attributes:
        positions: distancias d_k en metros, forma (K,).
        inner_radius: radio interior del anillo (m).
        outer_radius: radio exterior del anillo (m).
    """
    positions: np.ndarray
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim != 1 or positions.size < 1:
            raise DomainError("La topología necesita al menos un dispositivo")
        if not 0 < self.inner_radius <= self.outer_radius:
            raise DomainError("Se requiere 0 < inner_radius <= outer_radius")
        if np.any(positions < self.inner_radius) or np.any(positions > self.outer_radius):
            raise DomainError("Todas las distancias deben quedar dentro del anillo")
        object.__setattr__(self, "positions", positions)

    @property
    def device_count(self) -> int:
        return int(self.positions.size)


@dataclass(frozen=True)
class ChannelRealization:
    """
    Vectores de canal h_k de una ronda, en amplitud lineal.

    Attributes:
        vectors: matriz compleja (K, N); la fila k es h_k.
        round_index: índice de ronda t.
    """
    vectors: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=complex)
        if vectors.ndim != 2:
            raise DomainError("Los canales deben ser una matriz (K, N)")
        if not np.all(np.isfinite(vectors)):
            raise DomainError("Los canales contienen valores no finitos")
        object.__setattr__(self, "vectors", vectors)

    @property
    def device_count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def antenna_count(self) -> int:
        return int(self.vectors.shape[1])

    def __getitem__(self, k: int) -> np.ndarray:
        return self.vectors[k]


## ------------------------- CONVERSIÓN DE UNIDADES ------------------------- ##

def db_to_linear(value_db):
    """Convierte una magnitud de potencia en dB a escala lineal: 10^(x/10)."""
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watts(value_dbm):
    """Convierte dBm a vatios (0 dBm = 1 mW)."""
    return db_to_linear(np.asarray(value_dbm, dtype=float) - 30.0)


## ------------------------- OPERACIONES ------------------------- ##

def path_loss_db(distance: Union[float, np.ndarray]):
    """
    Pérdidas de trayecto en dB a una distancia dada.

    Args:
        distance: distancia en metros (escalar o array), estrictamente positiva.

    Returns:
        -35.3 - 37.6 log10(distance), con la misma forma que la entrada.

    Raises:
        DomainError: si alguna distancia es <= 0.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise DomainError("La distancia debe ser positiva")
    loss = PATH_LOSS_INTERCEPT_DB - PATH_LOSS_SLOPE_DB * np.log10(d)
    return float(loss) if loss.ndim == 0 else loss


def round_seed(master_seed: int, round_index: int, attempt: int = 0, stream: int = 0) -> int:
    """
    Deriva la sub-semilla de una ronda a partir de la semilla maestra.

    La derivación es SeedSequence((master, ronda, intento, flujo)) de numpy; el
    flujo 0 es el canal y los demás se reservan para otras fuentes aleatorias de
    la misma ronda (por ejemplo la política aleatoria).
    """
    sequence = np.random.SeedSequence([int(master_seed), int(round_index), int(attempt), int(stream)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def draw_topology(
    device_count: int,
    inner_radius: float = 50.0,
    outer_radius: float = 250.0,
    rng_seed: int = 0,
) -> Topology:
    """
    Coloca K dispositivos uniformemente (por área) en el anillo [inner, outer].

    Para una distribución uniforme en área la distancia cumple
    d = sqrt(u (R² - r²) + r²) con u ~ U(0, 1).
    """
    if device_count < 1:
        raise DomainError("device_count debe ser >= 1")
    rng = np.random.default_rng(rng_seed)
    u = rng.uniform(0.0, 1.0, size=device_count)
    distances = np.sqrt(u * (outer_radius ** 2 - inner_radius ** 2) + inner_radius ** 2)
    # Evita que el redondeo saque un punto del anillo
    distances = np.clip(distances, inner_radius, outer_radius)
    return Topology(positions=distances, inner_radius=inner_radius, outer_radius=outer_radius)


def draw_channels(topology: Topology, antenna_count: int, rng_seed: int, round_index: int = 0) -> ChannelRealization:
    """
    Sortea h_k = sqrt(beta_k) h~_k con h~_k ~ CN(0, I) para cada dispositivo.

    Args:
        topology: distancias de los dispositivos.
        antenna_count: número de antenas N del servidor (>= 1).
        rng_seed: semilla; misma semilla -> misma realización bit a bit.
        round_index: ronda a la que pertenece la realización.

    Returns:
        ChannelRealization con matriz (K, N).
    """
    if antenna_count < 1:
        raise DomainError("antenna_count debe ser >= 1")
    rng = np.random.default_rng(rng_seed)
    shape = (topology.device_count, antenna_count)
    # Partes real e imaginaria con varianza 1/2 cada una
    fading = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    gains = np.sqrt(db_to_linear(path_loss_db(topology.positions)))
    return ChannelRealization(vectors=gains[:, None] * fading, round_index=round_index)
