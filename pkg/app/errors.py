# Excepciones del simulador. La API las traduce a respuestas JSON en app/main.py


class SimulationError(Exception):
    """Error base de todo el paquete."""


class DomainError(SimulationError, ValueError):
    """Precondición violada (distancia no positiva, conjunto vacío, k fuera de S...)."""


class ConfigError(DomainError):
    """Fichero de configuración o valores de configuración inválidos."""


class InvariantViolation(SimulationError):
    """Una identidad comprobada en línea durante una ronda no se cumple."""


class SolverFailureError(SimulationError):
    """El solver cónico falla en más de la mitad de las rondas."""


class PostponementLimitError(SimulationError):
    """Una ronda se aplazó más veces de las permitidas sin programar dispositivos."""
