"""
Carga de configuración.

Los experimentos se describen con ficheros clave=valor planos (con comentarios
`#`), leídos con python-dotenv y validados con ExperimentConfig. Las variables del
servicio HTTP (DATABASE_URL, RATE_LIMIT, LOG_LEVEL) salen del entorno o de `.env`.
"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from app.errors import ConfigError
from app.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

load_dotenv()

DATABASE_URL = os.getenv("DATABASE_URL", "sqlite+aiosqlite:///./fl_mimo.db")
RATE_LIMIT = os.getenv("RATE_LIMIT", "10/minute")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Union[str, int] = LOG_LEVEL) -> None:
    """Handler raíz si no hay ninguno y nivel del paquete `app`."""
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger("app").setLevel(level)


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Lee un fichero clave=valor; las claves se normalizan a minúsculas."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"No existe el fichero de configuración: {path}")
    values = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().lower()
        if value is None or value.strip() == "":
            # Clave sin valor: se deja el valor por defecto (o None si es opcional)
            continue
        values[name] = value.strip()
    unknown = sorted(set(values) - set(ExperimentConfig.model_fields))
    if unknown:
        raise ConfigError(f"Claves desconocidas en {path.name}: {', '.join(unknown)}")
    return values


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> ExperimentConfig:
    """
    Construye un ExperimentConfig validado.

    Args:
        path: fichero de configuración opcional.
        overrides: valores que tienen prioridad sobre el fichero (p. ej. flags de la CLI);
            los que valen None se ignoran.

    Raises:
        ConfigError: claves desconocidas o valores inválidos.
    """
    values: Dict[str, Any] = read_config_file(path) if path is not None else {}
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        config = ExperimentConfig(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(f"Configuración inválida: {problems}") from exc
    logger.debug("Configuración cargada: %s", config.model_dump())
    return config
