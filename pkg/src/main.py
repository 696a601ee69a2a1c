"""
CLI del laboratorio de la esfera espectral

Comandos:
    train       Entrena un modelo de juguete según un archivo de configuración
    sweep       Barrido de anchura × η (y opcionalmente del radio c)
    place       Reparto de módulos atómicos entre rangos simulados
    moe-factor  Estimación Monte Carlo del factor de escala MoE

Códigos de salida: 0 éxito, 1 uso/configuración, 2 divergencia numérica.
"""

import json
import logging
import os
import sys
from dataclasses import replace

import click

# Agregar el directorio padre al path para imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ExperimentConfig, dump_config, load_config
from src.errors import ConfigError, PlacementError, SpectralSphereError
from src.experiments.harness import radius_sweep, sweep_output_path, train_from_config, width_sweep
from src.experiments.moe import estimate_moe_factor
from src.parallel.placement import PLACERS, place, parse_workload

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2


def _fail(error: SpectralSphereError) -> None:
    """Diagnóstico JSON en stderr."""
    click.echo(json.dumps(error.to_dict(), ensure_ascii=False), err=True)


def _load(config_path: str, output_dir):
    cfg = load_config(config_path)
    if output_dir:
        cfg = replace(cfg, output_dir=output_dir)
    return cfg


class SphereGroup(click.Group):
    """Grupo de comandos cuyos errores de uso salen con código 1."""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = EXIT_CONFIG
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = EXIT_CONFIG
            raise


@click.group(cls=SphereGroup)
@click.option('--verbose', is_flag=True, help='Log en nivel DEBUG')
def cli(verbose):
    """🌐 Laboratorio del optimizador de esfera espectral"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Archivo JSON de configuración')
@click.option('--output-dir', envvar='SSO_OUTPUT_DIR', default=None,
              help='Directorio de salida (sustituye output_dir)')
def train(config_path, output_dir):
    """Entrena y escribe métricas JSONL + CSV."""
    try:
        cfg: ExperimentConfig = _load(config_path, output_dir)
        click.echo(f"🚀 Entrenando {cfg.arch.kind} con {cfg.optimizer.value} "
                   f"({cfg.task.steps} pasos, semilla {cfg.seed})")
        result = train_from_config(cfg.task, cfg.arch, cfg.optimizer, cfg.sso,
                                   schedule=cfg.schedule, seed=cfg.seed,
                                   output_dir=cfg.output_dir, run_name=cfg.run_name)
    except SpectralSphereError as e:
        _fail(e)
        sys.exit(EXIT_CONFIG)

    if result.diverged:
        click.echo(json.dumps({'error': f'DivergenceDetected en el paso {result.divergence_step}',
                               'code': 'DIVERGENCE_DETECTED',
                               'step': result.divergence_step}), err=True)
        click.echo(f"❌ DivergenceDetected en el paso {result.divergence_step}")
        sys.exit(EXIT_DIVERGENCE)
    if result.error is not None:
        click.echo(json.dumps(result.error, ensure_ascii=False), err=True)
        click.echo("❌ Entrenamiento interrumpido por un fallo del optimizador")
        sys.exit(EXIT_DIVERGENCE)

    with open(os.path.join(cfg.output_dir, f'{cfg.run_name}.config.json'), 'w',
              encoding='utf-8') as f:
        f.write(dump_config(cfg))
    click.echo(f"✅ Pérdida final: {result.final_loss:.6f} "
               f"({len(result.metrics)} pasos, métricas en {cfg.output_dir})")
    sys.exit(EXIT_OK)


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Archivo JSON de configuración')
@click.option('--output-dir', envvar='SSO_OUTPUT_DIR', default=None,
              help='Directorio de salida (sustituye output_dir)')
def sweep(config_path, output_dir):
    """Barrido de anchura × η; escribe la rejilla en CSV."""
    try:
        cfg: ExperimentConfig = _load(config_path, output_dir)
        click.echo(f"🚀 Barrido {cfg.optimizer.value}: anchuras {cfg.sweep.widths}, "
                   f"η {cfg.sweep.eta_grid}")
        report = width_sweep(cfg.sweep.widths, cfg.optimizer, cfg.sweep.eta_grid, cfg.task,
                             cfg.arch, cfg.sso, schedule=cfg.schedule, seed=cfg.seed,
                             max_workers=cfg.sweep.max_workers, output_dir=cfg.output_dir)
        csv_path = report.export_csv(sweep_output_path(cfg.output_dir, cfg.optimizer))
    except ConfigError as e:
        _fail(e)
        sys.exit(EXIT_CONFIG)
    except SpectralSphereError as e:
        _fail(e)
        sys.exit(EXIT_DIVERGENCE)

    ok = [c for c in report.cells if c.ok]
    if not ok:
        click.echo("❌ Todas las celdas divergieron o fallaron", err=True)
        sys.exit(EXIT_DIVERGENCE)
    click.echo(f"✅ {len(ok)}/{len(report.cells)} celdas completadas → {csv_path}")
    for width, eta in report.best_eta().items():
        click.echo(f"   anchura {width}: mejor η = {eta}")

    if cfg.sweep.radius_cs:
        try:
            radii = radius_sweep(cfg.sweep.radius_cs, cfg.task, cfg.arch, cfg.sso,
                                 optimizer_kind=cfg.optimizer, schedule=cfg.schedule,
                                 seed=cfg.seed)
        except SpectralSphereError as e:
            _fail(e)
            click.echo("❌ Barrido de radio interrumpido; la rejilla sí se guardó")
        else:
            with open(os.path.join(cfg.output_dir, 'radius_sweep.json'), 'w',
                      encoding='utf-8') as f:
                json.dump({'rows': radii.to_rows(), 'exponent': radii.exponent}, f, indent=2)
            click.echo(f"📈 Exponente RMS ∝ c^{radii.exponent:.3f}")
    sys.exit(EXIT_OK)


@cli.command('place')
@click.option('--workload', required=True, type=click.Path(dir_okay=False),
              help='Lista JSON [{"module_name": ..., "cost": ...}]')
@click.option('--ranks', required=True, type=click.IntRange(min=1), help='Número de rangos')
@click.option('--policy', default='pingpong', show_default=True,
              type=click.Choice(['pingpong', 'greedy', 'roundrobin', 'all']))
def place_cmd(workload, ranks, policy):
    """Reparte módulos entre rangos e imprime el informe JSON."""
    try:
        try:
            with open(workload, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise PlacementError(f"no se pudo leer la carga de trabajo: {e}")
        items = parse_workload(data)
        if policy == 'all':
            document = {name: place(items, ranks, name).to_dict() for name in PLACERS}
        else:
            document = place(items, ranks, policy).to_dict()
    except SpectralSphereError as e:
        _fail(e)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(document, ensure_ascii=False, indent=2))
    sys.exit(EXIT_OK)


@cli.command('moe-factor')
@click.option('--n-total', default=64, show_default=True, type=int)
@click.option('--k', 'k_routed', default=4, show_default=True, type=int)
@click.option('--n-shared', default=1, show_default=True, type=int)
@click.option('--trials', default=10000, show_default=True, type=int)
@click.option('--seed', default=0, show_default=True, type=int)
def moe_factor(n_total, k_routed, n_shared, trials, seed):
    """Factor de escala MoE con su error estándar Monte Carlo."""
    try:
        estimate = estimate_moe_factor(n_total, k_routed, n_shared, trials, seed)
    except SpectralSphereError as e:
        _fail(e)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(estimate.to_dict()))
    sys.exit(EXIT_OK)


if __name__ == '__main__':
    cli()
