#!/usr/bin/env python3
"""
xtalkprint - Huellas de crosstalk por dispositivo y por localidad
Punto de entrada de línea de comandos: flota, enrolamiento, datasets,
entrenamiento, inferencia y reportes
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Agregar el directorio actual al path para importaciones
sys.path.insert(0, str(Path(__file__).parent))

from classifier import predict
from enrollment import Enrollment, EnrollmentProgress
from evaluation_suite import SCENARIO_TRAIN, EvaluationSuite, train_classifier
from fingerprint import LayoutMismatchError, slice_fingerprint
from noise_simulator import generate_fleet_model
from result_exporter import MissingArtifactError, ResultExporter, load_query
from run_config import ConfigError, RunConfig, load_config
from topology import (Embedding, EmbeddingResolver, PATTERN_NAMES, build_fleet, pattern_topology)


EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_MISSING = 3


def setup_logging(output_dir: Path, verbose: bool = False):
    """Configura el sistema de logging"""

    # Crear directorio de logs si no existe
    log_dir = Path(output_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / "xtalkprint.log"

    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=log_format,
        datefmt=date_format,
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )

    # Configurar nivel de logs para librerías externas
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('numba').setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logs guardándose en: {log_file}")
    return logger


def handle_exception(exc_type, exc_value, exc_traceback):
    """Maneja excepciones no capturadas"""

    if issubclass(exc_type, KeyboardInterrupt):
        # Permitir Ctrl+C
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return

    logger = logging.getLogger(__name__)
    logger.error("Excepción no manejada:", exc_info=(exc_type, exc_value, exc_traceback))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Archivo JSON de configuración (RunConfig)")
    common.add_argument("--seed", type=int, help="Semilla maestra")
    common.add_argument("--out", help="Directorio de salida")
    common.add_argument("--batches", type=int, help="Número de lotes")
    common.add_argument("--jobs", type=int, help="Trabajadores para el enrolamiento")
    common.add_argument("-v", "--verbose", action="store_true", help="Logs en nivel DEBUG")

    # Las banderas comunes van después del subcomando
    parser = argparse.ArgumentParser(prog="xtalkprint",
                                     description="Huellas de crosstalk de una flota simulada")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fleet-init", parents=[common], help="Crea la flota y los modelos de error")
    sub.add_parser("enroll", parents=[common], help="Enrola todos los (dispositivo, lote)")

    slice_cmd = sub.add_parser("slice", parents=[common], help="Construye los datasets por patrón")
    slice_cmd.add_argument("--pattern", choices=PATTERN_NAMES, action="append",
                           help="Patrón (repetible); por defecto los de la configuración")

    train_cmd = sub.add_parser("train", parents=[common], help="Entrena los clasificadores por patrón")
    train_cmd.add_argument("--pattern", choices=PATTERN_NAMES, action="append")

    infer_cmd = sub.add_parser("infer", parents=[common], help="Infiere la localidad de una huella")
    infer_cmd.add_argument("--pattern", choices=PATTERN_NAMES, required=True)
    infer_cmd.add_argument("--fingerprint", required=True, help="Huella de prueba (JSON o CSV)")
    infer_cmd.add_argument("--embedding",
                           help="Vertex map 'd0:0-1-2' para recortar una huella de dispositivo completo")

    sub.add_parser("eval", parents=[common], help="Genera los reportes de evaluación")

    emb_cmd = sub.add_parser("embeddings", parents=[common], help="Embebimientos de un patrón")
    emb_cmd.add_argument("--pattern", choices=PATTERN_NAMES, help="Sin patrón: censo completo")
    emb_cmd.add_argument("--count", action="store_true", help="Solo imprime el número de embebimientos")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Archivo de configuración, luego variable de entorno, luego banderas"""
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, out=args.out, batches=args.batches, jobs=args.jobs).validate()


def cmd_fleet_init(config: RunConfig, exporter: ResultExporter) -> int:
    logger = logging.getLogger(__name__)
    fleet = build_fleet(config.effective_fleet_seed)
    models = generate_fleet_model(fleet, config.noise, config.seed)
    exporter.write_fleet(fleet)
    exporter.write_models(models, config.seed)
    logger.info(f"Flota inicializada: {len(fleet.devices)} dispositivos en {exporter.root}")
    return EXIT_OK


def log_enroll_progress(progress: EnrollmentProgress):
    """Una línea de log por celda terminada"""
    remaining = "" if progress.estimated_remaining is None else f", restante ~{progress.estimated_remaining:.0f} s"
    logging.getLogger(__name__).info(
        f"Progreso {progress.cells_done}/{progress.total_cells}: {progress.current_cell}{remaining}")


def cmd_enroll(config: RunConfig, exporter: ResultExporter) -> int:
    fleet = exporter.read_fleet()
    models = exporter.read_models()
    progress = Enrollment(config, exporter, log_enroll_progress).enroll(fleet, models)
    if progress.incomplete:
        print(f"Celdas incompletas: {', '.join(progress.incomplete)}")
    return EXIT_OK


def cmd_slice(config: RunConfig, exporter: ResultExporter, patterns: List[str]) -> int:
    suite = EvaluationSuite(config, exporter, exporter.read_fleet())
    for pattern in patterns:
        dataset = suite.dataset(pattern)
        exporter.write_dataset(dataset)
        print(f"{pattern}: {dataset.num_classes} clases, {len(dataset.samples)} muestras, "
              f"dimensión {len(dataset.layout)}")
    return EXIT_OK


def cmd_train(config: RunConfig, exporter: ResultExporter, patterns: List[str]) -> int:
    suite = EvaluationSuite(config, exporter, exporter.read_fleet())
    for pattern in patterns:
        seed = suite.training_seed(pattern, SCENARIO_TRAIN)
        model, prep = train_classifier(suite.dataset(pattern), config.train_batches, config, seed)
        exporter.write_classifier(model, prep, seed)
        status = "convergió" if model.converged else "tope de conjuntos"
        print(f"{pattern}: pérdida final {model.training_log[-1]:.4f} ({status})")
    return EXIT_OK


def cmd_infer(exporter: ResultExporter, pattern: str, query_path: str, embedding_label: Optional[str]) -> int:
    model, prep = exporter.read_classifier(pattern)
    embedding, device = None, None
    if embedding_label:
        device_id, vertices = embedding_label.split(":")
        embedding = Embedding(pattern, device_id, tuple(int(q) for q in vertices.split("-")))
        device = exporter.read_fleet().device(device_id)

    query = load_query(query_path, device)
    if query.frame_kind == "device":
        if embedding is None:
            raise ConfigError("Una huella de dispositivo completo requiere --embedding")
        query = slice_fingerprint(query, embedding, device)
    elif embedding is not None:
        raise ConfigError(f"--embedding solo aplica a huellas de dispositivo completo ({query_path})")

    index, scores = predict(model, prep, query)
    predicted = model.classes[index]
    ranked = sorted(scores, reverse=True)
    margin = ranked[0] - ranked[1] if len(ranked) > 1 else float(ranked[0])
    print(f"device_id: {predicted.device_id}")
    print(f"vertex_map: {list(predicted.vertex_map)}")
    print(f"margin: {margin:.6f}")
    return EXIT_OK


def cmd_eval(config: RunConfig, exporter: ResultExporter) -> int:
    suite = EvaluationSuite(config, exporter, exporter.read_fleet())
    reports = suite.run_all()
    print(reports["accuracy_per_pattern"].to_string(index=False))
    return EXIT_OK


def cmd_embeddings(config: RunConfig, pattern: Optional[str], count_only: bool) -> int:
    fleet = build_fleet(config.effective_fleet_seed)
    resolver = EmbeddingResolver()
    if pattern is None:
        for name, per_device in resolver.census(fleet).items():
            print(f"{name}: {sum(per_device.values())}  {per_device}")
        return EXIT_OK

    topology = pattern_topology(pattern)
    embeddings = resolver.enumerate_embeddings(topology, fleet)
    if count_only:
        print(len(embeddings))
    else:
        print(resolver.create_embedding_tree(topology, fleet, embeddings).show(stdout=False))
    return EXIT_OK


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    setup_logging(config.output_path, args.verbose)
    exporter = ResultExporter(config.output_path)
    patterns = list(getattr(args, "pattern", None) or config.patterns) \
        if args.command in ("slice", "train") else []

    if args.command == "fleet-init":
        return cmd_fleet_init(config, exporter)
    if args.command == "enroll":
        return cmd_enroll(config, exporter)
    if args.command == "slice":
        return cmd_slice(config, exporter, patterns)
    if args.command == "train":
        return cmd_train(config, exporter, patterns)
    if args.command == "infer":
        return cmd_infer(exporter, args.pattern, args.fingerprint, args.embedding)
    if args.command == "eval":
        return cmd_eval(config, exporter)
    return cmd_embeddings(config, args.pattern, args.count)


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal"""

    # Configurar manejo de excepciones
    sys.excepthook = handle_exception
    args = build_parser().parse_args(argv)
    logger = logging.getLogger(__name__)

    try:
        return run(args)

    except MissingArtifactError as e:
        print(f"Artefactos faltantes: {e}", file=sys.stderr)
        for item in e.missing:
            print(f"  - {item}", file=sys.stderr)
        return EXIT_MISSING

    except (ConfigError, LayoutMismatchError, ValueError, KeyError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID

    except KeyboardInterrupt:
        logger.info("Ejecución interrumpida por el usuario")
        return EXIT_OK

    except Exception as e:
        logger.error(f"Error fatal: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
