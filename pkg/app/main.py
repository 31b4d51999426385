# app/main.py
import logging

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from slowapi import Limiter
from slowapi.errors import RateLimitExceeded
from slowapi.middleware import SlowAPIMiddleware
from slowapi.util import get_remote_address
from sqlalchemy import inspect
from sqlalchemy.ext.asyncio import AsyncEngine

# Importaciones de la aplicación
from app import models  # noqa: F401  registra las tablas en Base.metadata
from app.config import LOG_LEVEL, RATE_LIMIT, configure_logging
from app.database import Base, engine
from app.errors import DomainError, SimulationError
from app.routers import experiments

logger = logging.getLogger(__name__)

# --------------------------------------------------
# CONFIGURACIÓN DEL RATE LIMITER
# --------------------------------------------------
# Límite por defecto para todas las rutas, aplicado por SlowAPIMiddleware
limiter = Limiter(key_func=get_remote_address, default_limits=[RATE_LIMIT])

# --------------------------------------------------
# CONFIGURACIÓN DE LA APLICACIÓN
# --------------------------------------------------
app = FastAPI(
    title="FL-MIMO API",
    description="Simulador de aprendizaje federado sobre subida MIMO multiusuario con programación de dispositivos",
    version="1.0.0",
    license_info={
        "name": "MIT",
    },
)

# --------------------------------------------------
# FUNCIONES DE INICIALIZACIÓN
# --------------------------------------------------
REQUIRED_TABLES = {"experiments", "round_metrics"}


async def check_tables_exist(engine: AsyncEngine) -> bool:
    """
    Comprueba si existen todas las tablas necesarias.

    Returns:
        True si están 'experiments' y 'round_metrics'.
    """
    async with engine.connect() as conn:
        existing_tables = await conn.run_sync(lambda sync_conn: inspect(sync_conn).get_table_names())
        return REQUIRED_TABLES.issubset(existing_tables)


async def initialize_database():
    """
    Crea las tablas si no existen.

    Raises:
        Exception: si falla la inicialización.
    """
    try:
        if not await check_tables_exist(engine):
            logger.info("⚠ Tablas no encontradas, creando estructura de base de datos...")
            async with engine.begin() as conn:
                await conn.run_sync(Base.metadata.create_all)
            logger.info("✔ Base de datos inicializada correctamente")
        else:
            logger.info("✔ Tablas ya existen en la base de datos")
    except Exception as e:
        logger.error("✖ Error al inicializar la base de datos: %s", e)
        raise

# --------------------------------------------------
# EVENTOS DE LA APLICACIÓN
# --------------------------------------------------
@app.on_event("startup")
async def startup_event():
    configure_logging(LOG_LEVEL)
    await initialize_database()

# --------------------------------------------------
# MIDDLEWARES
# --------------------------------------------------
app.add_middleware(SlowAPIMiddleware)
app.state.limiter = limiter

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# --------------------------------------------------
# MANEJADORES DE ERRORES
# --------------------------------------------------
def _error_response(status_code: int, message: str, error: str, headers=None) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content={"message": message, "success": False, "error": error},
        headers=headers,
    )


@app.exception_handler(RateLimitExceeded)
async def rate_limit_exceeded_handler(request: Request, exc: RateLimitExceeded):
    """Responde 429 con cabecera Retry-After de 60 segundos."""
    return _error_response(
        429,
        f"Ha superado el límite de {RATE_LIMIT} solicitudes. Por favor espere.",
        "RateLimitExceeded",
        headers={"Retry-After": str(60)},
    )


@app.exception_handler(HTTPException)
async def http_exception_handler(request: Request, exc: HTTPException):
    return _error_response(exc.status_code, exc.detail, type(exc).__name__)


@app.exception_handler(DomainError)
async def domain_error_handler(request: Request, exc: DomainError):
    """Precondiciones y configuración inválidas: 422."""
    return _error_response(422, str(exc), type(exc).__name__)


@app.exception_handler(SimulationError)
async def simulation_error_handler(request: Request, exc: SimulationError):
    """Invariantes violados, fallos del solver o aplazamientos agotados: 500."""
    logger.error("✖ %s: %s", type(exc).__name__, exc)
    return _error_response(500, str(exc), type(exc).__name__)

# --------------------------------------------------
# RUTAS PRINCIPALES
# --------------------------------------------------
@app.get("/", tags=["Inicio"])
async def root():
    """Mensaje de bienvenida con la versión y las rutas disponibles."""
    return {
        "message": "¡Bienvenido a FL-MIMO!",
        "documentación": "/docs",
        "versión": app.version,
        "rutas_disponibles": {
            "experimentos": "/api/v1/experiments",
        },
    }

# --------------------------------------------------
# INCLUSIÓN DE ROUTERS
# --------------------------------------------------
routers_config = [
    (experiments.router, "/api/v1/experiments", "Experimentos"),
]

for router, prefix, tags in routers_config:
    app.include_router(router, prefix=prefix, tags=[tags])
