"""
Línea de órdenes del simulador.

    python -m app.cli --config configs/reference.env --policy proposed --output out/metrics.csv
    python -m app.cli --config configs/reference.env --compare --output out/compare.csv

Códigos de salida: 0 éxito, 1 error de validación o de simulación, 2 uso incorrecto.
"""
import argparse
import logging
import sys
from typing import List, Optional

from app.config import configure_logging, load_config
from app.errors import SimulationError
from app.schemas import POLICIES
from app.sim import run_comparison, run_experiment, write_metrics

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fl-mimo",
        description="Simulador de aprendizaje federado sobre subida MIMO multiusuario con programación de dispositivos",
    )
    parser.add_argument("--config", help="fichero clave=valor con la configuración del experimento")
    parser.add_argument("--policy", choices=POLICIES, help="política de programación (por defecto la de la configuración)")
    parser.add_argument("--rounds", type=int, help="número de rondas tau")
    parser.add_argument("--seed", type=int, dest="master_seed", help="semilla maestra")
    parser.add_argument("--output", help="ruta del CSV de métricas")
    parser.add_argument("--compare", action="store_true", help="ejecuta las tres políticas con la misma semilla")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="nivel de logging",
    )
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Punto de entrada; devuelve el código de salida en lugar de terminar el proceso."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    configure_logging(args.log_level)

    try:
        config = load_config(
            args.config,
            policy=args.policy,
            rounds=args.rounds,
            master_seed=args.master_seed,
            output_path=args.output,
        )
        if args.compare:
            records = list(run_comparison(config).values())
        else:
            records = [run_experiment(config)]
    except SimulationError as exc:
        print(f"✖ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    for record in records:
        summary = record.summary
        print(
            f"✔ {record.config.policy}: pérdida final {summary.final_loss:.5f}, "
            f"precisión {summary.final_accuracy:.3f}, masa media {summary.mean_weighted_mass:.3f}, "
            f"cota {summary.theorem_bound:.4e} (medido {summary.measured_avg_grad_norm_sq:.4e})"
        )
    if config.output_path:
        try:
            path = write_metrics(records, config.output_path)
        except SimulationError as exc:
            print(f"✖ {exc}", file=sys.stderr)
            return EXIT_FAILURE
        print(f"✔ Métricas escritas en {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(cli_main())
