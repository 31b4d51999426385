"""
Lado de aprendizaje: regresión logística multinomial, actualizaciones locales de
un paso, agregación ponderada, residuo de la agregación parcial y la cota de
convergencia.

El modelo trabaja sobre la matriz de diseño aumentada [x, 1]; los parámetros son
el vector aplanado de W con forma (D + 1, C).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from app.errors import DomainError

logger = logging.getLogger(__name__)

ModelParams = np.ndarray

SMOOTHNESS_FLOOR = 1e-8
KAPPA_SAFETY_FACTOR = 2.0


## ------------------------- DATOS ------------------------- ##

@dataclass(frozen=True)
class Dataset:
    """
    Conjunto de entrenamiento completo.

    Attributes:
        features: matriz (n, D) sin aumentar.
        labels: etiquetas enteras en [0, C).
        num_classes: número de clases C.
    """
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    design: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise DomainError("features debe ser (n, D) y labels (n,)")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DomainError("Etiquetas fuera de [0, num_classes)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "design", np.hstack([features, np.ones((features.shape[0], 1))]))

    @property
    def size(self) -> int:
        return int(self.labels.size)

    @property
    def model_dim(self) -> int:
        return self.design.shape[1] * self.num_classes


@dataclass(frozen=True)
class DataShard:
    """
    Datos locales de un dispositivo (subconjunto disjunto del conjunto global).

    Attributes:
        owner: id del dispositivo.
        indices: posiciones de las muestras en el conjunto global.
        design: filas aumentadas de esas muestras.
        labels: etiquetas.
        num_classes: C.
        weight: alpha_k = n_k / n.
    """
    owner: int
    indices: np.ndarray
    design: np.ndarray
    labels: np.ndarray
    num_classes: int
    weight: float

    @property
    def size(self) -> int:
        return int(self.labels.size)


DataLike = Union[Dataset, DataShard]


def zero_model(data: DataLike) -> ModelParams:
    return np.zeros(data.design.shape[1] * data.num_classes)


def make_synthetic_dataset(
    sample_count: int = 2000,
    feature_dim: int = 32,
    num_classes: int = 10,
    class_separation: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """
    Mezcla gaussiana balanceada: la clase c tiene media mu_c ~ N(0, sep² I) y las
    muestras son mu_c + N(0, I).
    """
    if sample_count < 1 or feature_dim < 1 or num_classes < 2:
        raise DomainError("Parámetros del conjunto sintético inválidos")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, class_separation, size=(num_classes, feature_dim))
    labels = rng.permutation(np.arange(sample_count) % num_classes)
    features = means[labels] + rng.standard_normal((sample_count, feature_dim))
    return Dataset(features=features, labels=labels, num_classes=num_classes)


def load_dataset(path: Union[str, Path], num_classes: Optional[int] = None) -> Dataset:
    """
    Carga un conjunto externo. Formatos:

    - `.npy`: matriz 2-D de floats; la última columna es la etiqueta entera.
    - cualquier otro: texto delimitado por comas, una muestra por línea
      (f_1, ..., f_D, etiqueta); las líneas que empiezan por `#` se ignoran.
    """
    path = Path(path)
    if not path.exists():
        raise DomainError(f"No existe el fichero de datos: {path}")
    try:
        if path.suffix == ".npy":
            table = np.load(path)
        else:
            table = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        table = np.asarray(table, dtype=float)
    except (ValueError, OSError) as exc:
        raise DomainError(f"Fichero de datos mal formado {path}: {exc}") from exc
    if table.ndim != 2 or table.shape[1] < 2:
        raise DomainError("El fichero de datos necesita al menos una característica y la etiqueta")
    raw_labels = table[:, -1]
    if not np.all(raw_labels == np.round(raw_labels)):
        raise DomainError("La última columna debe contener etiquetas enteras")
    labels = raw_labels.astype(int)
    classes = int(labels.max()) + 1 if num_classes is None else num_classes
    return Dataset(features=table[:, :-1], labels=labels, num_classes=classes)


def partition_noniid(dataset: Dataset, device_count: int, rng_seed: int = 0, size_spread: float = 0.75) -> List[DataShard]:
    """
    Reparto no iid: se ordenan las muestras por clase y se cortan en K bloques
    contiguos y disjuntos de tamaños heterogéneos.

    Los tamaños salen de proporciones lognormales sembradas; cada dispositivo
    recibe al menos una muestra y el resto se reparte por mayores restos hasta
    agotar el conjunto.
    """
    n = dataset.size
    if device_count < 1:
        raise DomainError("device_count debe ser >= 1")
    if n < device_count:
        raise DomainError("El conjunto de datos tiene menos muestras que dispositivos")

    rng = np.random.default_rng(rng_seed)
    proportions = rng.lognormal(0.0, size_spread, size=device_count)
    proportions /= proportions.sum()
    spare = n - device_count
    exact = proportions * spare
    sizes = np.floor(exact).astype(int)
    leftover = spare - int(sizes.sum())
    sizes[np.argsort(-(exact - sizes), kind="stable")[:leftover]] += 1
    sizes += 1

    order = np.argsort(dataset.labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = []
    for k in range(device_count):
        idx = order[bounds[k]:bounds[k + 1]]
        shards.append(DataShard(
            owner=k,
            indices=idx,
            design=dataset.design[idx],
            labels=dataset.labels[idx],
            num_classes=dataset.num_classes,
            weight=float(sizes[k]) / n,
        ))
    return shards


def shard_weights(shards: Sequence[DataShard]) -> np.ndarray:
    return np.array([shard.weight for shard in shards], dtype=float)


## ------------------------- MODELO ------------------------- ##

def _weights_matrix(w: ModelParams, design: np.ndarray, num_classes: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.size != design.shape[1] * num_classes:
        raise DomainError(
            f"Dimensión del modelo {w.size} incompatible con ({design.shape[1]} x {num_classes})"
        )
    return w.reshape(design.shape[1], num_classes)


def _softmax_loss_grad(w: ModelParams, design: np.ndarray, labels: np.ndarray, num_classes: int) -> Tuple[float, np.ndarray]:
    W = _weights_matrix(w, design, num_classes)
    logits = design @ W
    n = labels.size
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(n), labels]))
    delta = softmax(logits, axis=1)
    delta[np.arange(n), labels] -= 1.0
    gradient = design.T @ delta / n
    return loss, gradient.ravel()


def loss_and_gradient(w: ModelParams, data: DataLike) -> Tuple[float, np.ndarray]:
    """
    Entropía cruzada media con softmax sobre C clases y su gradiente exacto.

    Args:
        w: parámetros aplanados (d = (D + 1) C).
        data: Dataset o DataShard.

    Returns:
        (pérdida, gradiente de longitud d).
    """
    if data.labels.size == 0:
        raise DomainError("No hay muestras para evaluar la pérdida")
    return _softmax_loss_grad(w, data.design, data.labels, data.num_classes)


def per_sample_gradient_norms_sq(w: ModelParams, design: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """||grad f(w; xi_i)||² = ||x_i||² · ||softmax(W^T x_i) - e_{y_i}||² para cada muestra."""
    W = _weights_matrix(w, design, num_classes)
    delta = softmax(design @ W, axis=1)
    delta[np.arange(labels.size), labels] -= 1.0
    return np.sum(design ** 2, axis=1) * np.sum(delta ** 2, axis=1)


def accuracy(w: ModelParams, data: DataLike) -> float:
    """Fracción de muestras bien clasificadas."""
    W = _weights_matrix(w, data.design, data.num_classes)
    return float(np.mean(np.argmax(data.design @ W, axis=1) == data.labels))


def local_update(w_prev: ModelParams, shard: DataShard, eta: float) -> ModelParams:
    """Un paso de descenso de gradiente de lote completo sobre el shard local."""
    if eta <= 0:
        raise DomainError("La tasa de aprendizaje debe ser positiva")
    if shard.size == 0:
        raise DomainError(f"El shard del dispositivo {shard.owner} está vacío")
    _, gradient = loss_and_gradient(w_prev, shard)
    return np.asarray(w_prev, dtype=float) - eta * gradient


def aggregate(locals_: Mapping[int, ModelParams], weights: Sequence[float], scheduled: Iterable[int]) -> ModelParams:
    """w_t = sum_{k in S} alpha_k w_{k,t} / sum_{k in S} alpha_k."""
    scheduled = list(scheduled)
    if not scheduled:
        raise DomainError("No se puede agregar un conjunto vacío")
    missing = [k for k in scheduled if k not in locals_]
    if missing:
        raise DomainError(f"Faltan modelos locales de {missing}")
    mass = float(sum(weights[k] for k in scheduled))
    total = sum(weights[k] * np.asarray(locals_[k], dtype=float) for k in scheduled)
    return total / mass


## ------------------------- RESIDUO Y COTA ------------------------- ##

@dataclass(frozen=True)
class ResidualCheck:
    """
    Descomposición de la ronda w_t = w_{t-1} - eta (grad F(w_{t-1}) + e_t).

    Attributes:
        residual: e_t.
        identity_residual: ||aggregate(...) - (w_{t-1} - eta (grad F + e_t))||.
        full_gradient: grad F(w_{t-1}) = sum_k alpha_k grad f_k.
        aggregated: modelo global agregado w_t.
        local_models: w_{k,t} de los dispositivos programados.
    """
    residual: np.ndarray
    identity_residual: float
    full_gradient: np.ndarray
    aggregated: ModelParams
    local_models: Dict[int, ModelParams]


def residual(
    w_prev: ModelParams,
    shards: Sequence[DataShard],
    weights: Sequence[float],
    scheduled: Iterable[int],
    eta: float,
) -> ResidualCheck:
    """
    Calcula e_t por su definición y verifica la identidad de la agregación.

    e_t = (sum_{k in S} alpha_k g_k) / (sum_{k in S} alpha_k) - sum_k alpha_k g_k
    con g_k el gradiente medio del shard k en w_{t-1}.
    """
    scheduled = list(scheduled)
    if not scheduled:
        raise DomainError("El residuo requiere un conjunto programado no vacío")
    w_prev = np.asarray(w_prev, dtype=float)
    gradients = {shard.owner: loss_and_gradient(w_prev, shard)[1] for shard in shards}
    full_gradient = sum(weights[k] * g for k, g in gradients.items())
    mass = float(sum(weights[k] for k in scheduled))
    partial = sum(weights[k] * gradients[k] for k in scheduled) / mass
    e_t = partial - full_gradient

    local_models = {k: w_prev - eta * gradients[k] for k in scheduled}
    aggregated = aggregate(local_models, weights, scheduled)
    identity = float(np.linalg.norm(aggregated - (w_prev - eta * (full_gradient + e_t))))
    return ResidualCheck(
        residual=e_t,
        identity_residual=identity,
        full_gradient=full_gradient,
        aggregated=aggregated,
        local_models=local_models,
    )


@dataclass(frozen=True)
class BoundInputs:
    """
    Constantes de la cota de convergencia.

    Attributes:
        smoothness: L.
        gradient_bound: kappa.
        step_size: varsigma, con 0 < varsigma <= 1/L.
        initial_loss: F(w_0).
        optimal_loss_estimate: estimación de F(w*).
        round_count: tau.
    """
    smoothness: float
    gradient_bound: float
    step_size: float
    initial_loss: float
    optimal_loss_estimate: float
    round_count: int

    def __post_init__(self):
        if not (np.isfinite(self.smoothness) and np.isfinite(self.gradient_bound)):
            raise DomainError("L y kappa deben ser finitos")
        if self.step_size <= 0 or self.step_size > (1.0 / self.smoothness) * (1.0 + 1e-12):
            raise DomainError("La tasa de aprendizaje debe cumplir 0 < varsigma <= 1/L")
        if self.round_count < 1:
            raise DomainError("round_count debe ser >= 1")


def theorem_bound(inputs: BoundInputs, gap_terms: Sequence[float]) -> float:
    """
    Cota superior de la media de ||grad F(w_{t-1})||² tras tau rondas:

        2 (F(w_0) - F(w*)) / (varsigma tau) + (4 kappa / tau) sum_t (1 - sum_{k in S_t} alpha_k)²
    """
    gaps = np.asarray(gap_terms, dtype=float)
    if gaps.size != inputs.round_count:
        raise DomainError("Se necesita un término de hueco por ronda")
    tau = inputs.round_count
    descent = 2.0 * (inputs.initial_loss - inputs.optimal_loss_estimate) / (inputs.step_size * tau)
    return float(descent + 4.0 * inputs.gradient_bound * gaps.sum() / tau)


def descent_gap(loss_prev: float, loss_new: float, grad_norm_sq: float, residual_norm_sq: float, step: float) -> float:
    """
    Holgura de la desigualdad de descenso por ronda:
    F(w_{t-1}) - (step/2)||grad F||² + (step/2)||e_t||² - F(w_t) (>= 0 si step <= 1/L).
    """
    return float(loss_prev - 0.5 * step * grad_norm_sq + 0.5 * step * residual_norm_sq - loss_new)


@dataclass(frozen=True)
class SmoothnessEstimate:
    smoothness: float
    kappa_analytic: float
    kappa_empirical: float


def estimate_smoothness_and_kappa(
    design: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    trajectory_steps: int = 50,
) -> SmoothnessEstimate:
    """
    Estima L y kappa para la regresión softmax sobre la matriz de diseño dada.

    - L = (1/2) lambda_max(X^T X / n): la curvatura de la softmax está acotada por 1/2.
      Si sale 0 (datos degenerados) se sustituye por 1e-8.
    - kappa analítico = 2 max_i ||x_i||², porque ||softmax - e_y||² <= 2.
    - kappa empírico = 2 · máximo de ||grad f(w; xi)||² visto en una ejecución de
      sondeo de descenso de gradiente con paso 1/L.
    """
    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if design.shape[0] == 0:
        raise DomainError("Se necesitan datos para estimar L y kappa")
    n = design.shape[0]
    second_moment = design.T @ design / n
    smoothness = 0.5 * float(np.linalg.eigvalsh(second_moment)[-1])
    smoothness = max(smoothness, SMOOTHNESS_FLOOR)
    kappa_analytic = KAPPA_SAFETY_FACTOR * float(np.max(np.sum(design ** 2, axis=1)))

    w = np.zeros(design.shape[1] * num_classes)
    observed = 0.0
    for _ in range(trajectory_steps + 1):
        observed = max(observed, float(per_sample_gradient_norms_sq(w, design, labels, num_classes).max()))
        _, gradient = _softmax_loss_grad(w, design, labels, num_classes)
        w = w - gradient / smoothness
    return SmoothnessEstimate(
        smoothness=smoothness,
        kappa_analytic=kappa_analytic,
        kappa_empirical=KAPPA_SAFETY_FACTOR * observed,
    )


def estimate_optimal_loss(dataset: Dataset, tol: float = 1e-8, max_iterations: int = 5000) -> float:
    """
    Estimación de F(w*) por minimización con participación completa (L-BFGS-B).
    Devuelve la menor pérdida alcanzada, nunca mayor que F(0).
    """
    start = zero_model(dataset)
    initial = loss_and_gradient(start, dataset)[0]
    result = minimize(
        lambda w: loss_and_gradient(w, dataset),
        start,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": tol, "maxiter": max_iterations},
    )
    if not result.success:
        logger.info("⚠ L-BFGS terminó sin alcanzar la tolerancia: %s", result.message)
    return float(min(result.fun, initial))
