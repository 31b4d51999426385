from sqlalchemy.ext.asyncio import create_async_engine, async_sessionmaker
from sqlalchemy.orm import declarative_base

from app.config import DATABASE_URL

engine = create_async_engine(
    DATABASE_URL,
    pool_pre_ping=True,  # Verifica conexiones antes de usarlas
    echo=False,
)

AsyncSessionLocal = async_sessionmaker(engine, expire_on_commit=False)
Base = declarative_base()


async def get_db():
    """
    Generador asíncrono que entrega una sesión de base de datos.

    Yields:
        Una sesión AsyncSession; se cierra siempre al terminar, incluso si hay excepción.
    """
    async with AsyncSessionLocal() as db:
        try:
            yield db
        finally:
            await db.close()
