#! /usr/bin/env python3

# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

"""
Segment handwritten text images into lines, words and characters, either
statically (projection profiles) or dynamically (over-segmentation checked
by a trained recogniser), and benchmark both on a synthetic corpus.

    bin/glyphseg.py generate-corpus --out output/corpus
    bin/glyphseg.py train --out output
    bin/glyphseg.py segment-static output/corpus/page-000.pbm
    bin/glyphseg.py segment-dynamic --model output/glyphseg-model.txt output/corpus/page-000.pbm
    bin/glyphseg.py evaluate --config data/glyphseg-quick.yaml --assert-trends

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 trend assertion failure.
"""

import functools
import json
import logging
import os
import sys
from dataclasses import replace

import click

# Awkward hack to allow importing into tests
try:
    from config import RunConfig, load_config
    from corpus import GlyphSet, default_glyph_set, generate, load_glyph_set, save_glyph_set, training_set, truth_records
    from dynamic_seg import segment_page
    from errors import EXIT_USAGE, GlyphsegError, TrendAssertionError
    from evaluation import (
        CLASSIFICATION_REPORT,
        DYNAMIC_REPORT,
        STATIC_REPORT,
        TRAINING_MSE_REPORT,
        check_dynamic_trends,
        check_training_trends,
        classification_table,
        dynamic_table,
        evaluate_dynamic,
        evaluate_static,
        evaluate_training,
        static_table,
        train_checkpoints,
        training_mse_table,
        write_report,
    )
    from mlp import fit, load_model, save_model
    from preprocess import binarize, denoise, deskew, enhance, normalize, preprocess_page
    from raster import BinaryImage, Box, crop, read_image, render_overlay, to_gray, write_binary, write_gray
    from similarity import load_templates, templates_from_glyphs
    from static_seg import dissect, dissect_rows
    from utils import _get_configuration_path, get_output_path, init_sentry, report_failure
except ImportError:
    from .config import RunConfig, load_config
    from .corpus import GlyphSet, default_glyph_set, generate, load_glyph_set, save_glyph_set, training_set, truth_records
    from .dynamic_seg import segment_page
    from .errors import EXIT_USAGE, GlyphsegError, TrendAssertionError
    from .evaluation import (
        CLASSIFICATION_REPORT,
        DYNAMIC_REPORT,
        STATIC_REPORT,
        TRAINING_MSE_REPORT,
        check_dynamic_trends,
        check_training_trends,
        classification_table,
        dynamic_table,
        evaluate_dynamic,
        evaluate_static,
        evaluate_training,
        static_table,
        train_checkpoints,
        training_mse_table,
        write_report,
    )
    from .mlp import fit, load_model, save_model
    from .preprocess import binarize, denoise, deskew, enhance, normalize, preprocess_page
    from .raster import BinaryImage, Box, crop, read_image, render_overlay, to_gray, write_binary, write_gray
    from .similarity import load_templates, templates_from_glyphs
    from .static_seg import dissect, dissect_rows
    from .utils import _get_configuration_path, get_output_path, init_sentry, report_failure

LOG_LEVEL = os.environ.get("GLYPHSEG_LOG_LEVEL", "WARNING")
MODEL_FILENAME = "glyphseg-model.txt"


class GlyphsegGroup(click.Group):
    """Click group whose usage errors exit with 1 rather than click's 2."""

    def main(self, *args, standalone_mode=True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            return super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as ex:
            ex.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as ex:
            ex.show()
            sys.exit(ex.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)


class GlyphsegException(click.ClickException):
    def __init__(self, error: GlyphsegError):
        super().__init__(str(error))
        self.exit_code = error.exit_code


def _handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GlyphsegError as ex:
            raise GlyphsegException(ex) from ex

    return wrapper


def _common_options(func):
    options = [
        click.option("--config", "config_path", default=None, help="YAML run configuration (default: data/glyphseg.yaml)"),
        click.option("--seed", type=int, default=None, envvar="GLYPHSEG_SEED", help="Seed for corpus generation and training"),
        click.option("--out", "out", default=None, help="Output directory, overriding paths.output_dir"),
        click.option("--jobs", type=click.IntRange(min=1), default=None, help="Maximum worker threads"),
    ]
    for option in reversed(options):
        func = option(func)
    return _handle_errors(func)


def _load(config_path, seed, out, jobs) -> RunConfig:
    return load_config(config_path).with_overrides(seed=seed, output_dir=out, jobs=jobs)


def _glyph_set(run: RunConfig, directory=None) -> GlyphSet:
    directory = directory or run.paths.glyph_dir
    if directory:
        return load_glyph_set(_get_configuration_path(directory))
    return default_glyph_set(run.glyphs.exemplars_per_class, run.glyphs.glyph_size, run.corpus.seed)


def _load_page(path, run: RunConfig) -> BinaryImage:
    img = read_image(path)
    if isinstance(img, BinaryImage):
        return img
    return preprocess_page(img, run.preprocess)


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _write_manifest(path, records) -> None:
    with open(path, "w") as fp:
        for record in records:
            fp.write(json.dumps(record))
            fp.write("\n")
    click.echo(f"Manifest written to {path}")


@click.group(cls=GlyphsegGroup)
def cli():
    logging.basicConfig(level=LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    init_sentry()


@cli.command("preprocess")
@click.argument("input_image", type=click.Path(exists=True, dir_okay=False))
@_common_options
def preprocess_command(input_image, config_path, seed, out, jobs):
    """Denoise, enhance, binarise, deskew and normalise one scan."""
    run = _load(config_path, seed, out, jobs)
    cfg = run.preprocess
    img = read_image(input_image)
    gray = to_gray(img) if isinstance(img, BinaryImage) else img

    denoised = denoise(gray, cfg.median_window)
    enhanced = enhance(denoised, cfg.high_boost_factor)
    binary = binarize(enhanced)
    deskewed, angle = deskew(binary, cfg)
    normalized = normalize(binary, cfg)

    output_path = get_output_path(run.paths.output_dir)
    stem = _stem(input_image)
    stages = [
        (f"{stem}.1-denoised.pgm", write_gray, denoised),
        (f"{stem}.2-enhanced.pgm", write_gray, enhanced),
        (f"{stem}.3-binarized.pbm", write_binary, binary),
        (f"{stem}.4-deskewed.pbm", write_binary, deskewed),
        (f"{stem}.5-normalized.pbm", write_binary, normalized),
    ]
    for filename, writer, stage in stages:
        writer(os.path.join(output_path, filename), stage)
        click.echo(f"Wrote {os.path.join(output_path, filename)}")
    click.echo(f"Skew correction: {angle:+.1f} degrees")


@cli.command("train")
@click.option("--glyph-dir", default=None, help="Directory of <label>/<n>.pbm exemplars (default: paths.glyph_dir, else the bundled set)")
@_common_options
def train_command(glyph_dir, config_path, seed, out, jobs):
    """Train the recogniser and save it in the v1 model format."""
    run = _load(config_path, seed, out, jobs)
    glyphs = _glyph_set(run, glyph_dir)
    data = training_set(glyphs, run.preprocess, augment=run.glyphs.augment, seed=run.corpus.seed, holdout=False)
    config = run.mlp.mlp_config(run.preprocess.vector_length, len(glyphs.labels))
    spec = run.mlp.train_spec()
    click.echo(f"Training {spec.method} on {len(data.training)} examples of {len(glyphs.labels)} classes for {spec.epochs} epochs")
    net, report = fit(config, data.training, spec, labels=glyphs.labels)

    output_path = get_output_path(run.paths.output_dir)
    model_path = run.paths.model_file or os.path.join(output_path, MODEL_FILENAME)
    save_model(model_path, net)
    report_path = os.path.join(output_path, "train_report.csv")
    with open(report_path, "w") as fp:
        fp.write("epoch,mse\n")
        for epoch, error in enumerate(report.mse_per_epoch, start=1):
            fp.write(f"{epoch},{error:.9f}\n")
    click.echo(f"Final MSE {report.final_mse:.6f} after {report.epochs_run} epochs ({report.rejected_steps} rejected steps)")
    click.echo(f"Model written to {model_path}")
    click.echo(f"Training report written to {report_path}")


def _band_box(band: Box, interval) -> Box:
    return Box(band.top, interval[0], band.bottom, interval[1])


@cli.command("segment-static")
@click.argument("page_image", type=click.Path(exists=True, dir_okay=False))
@_common_options
def segment_static_command(page_image, config_path, seed, out, jobs):
    """Projection-profile dissection into lines, words and characters."""
    run = _load(config_path, seed, out, jobs)
    page = _load_page(page_image, run)
    dissection = dissect(page, run.static)

    output_path = get_output_path(run.paths.output_dir)
    stem = f"{_stem(page_image)}-static"
    char_dir = os.path.join(output_path, stem)
    os.makedirs(char_dir, exist_ok=True)

    records, boxes, shaded = [], [], []
    for index, line in enumerate(dissection.lines):
        characters = dissection.characters_per_line[index]
        spaces = [interval for line_index, interval in dissection.spaces if line_index == index]
        for position, box in enumerate(characters):
            write_binary(os.path.join(char_dir, f"line{index:02d}-char{position:03d}.pbm"), crop(page, box))
        records.append(
            {
                "line": index,
                "band": line.box.as_list(),
                "headline_row": line.headline_row,
                "zones": list(line.zones),
                "modifier": dissection.modifiers[index].as_list() if dissection.modifiers[index] else None,
                "characters": [box.as_list() for box in characters],
                "words": [box.as_list() for box in dissection.words_per_line[index]],
                "spaces": [list(space) for space in spaces],
            }
        )
        boxes.extend(characters)
        shaded.extend(_band_box(line.box, space) for space in spaces)

    _write_manifest(os.path.join(output_path, f"{stem}.jsonl"), records)
    overlay_path = os.path.join(output_path, f"{stem}-overlay.pgm")
    write_gray(overlay_path, render_overlay(page, boxes, shaded))
    click.echo(f"{len(dissection.lines)} lines, {dissection.character_count} characters; overlay written to {overlay_path}")


@cli.command("segment-dynamic")
@click.argument("page_image", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", default=None, help="Trained model file (default: paths.model_file)")
@click.option("--templates", "template_dir", default=None, help="Directory of <label>_<writer>_<n>.pbm templates (default: the glyph set)")
@_common_options
def segment_dynamic_command(page_image, model_path, template_dir, config_path, seed, out, jobs):
    """Recognition-driven segmentation of every line of a page."""
    run = _load(config_path, seed, out, jobs)
    model_path = model_path or run.paths.model_file
    if not model_path:
        raise click.UsageError("segment-dynamic needs --model (or paths.model_file in the configuration)")
    net = load_model(model_path)
    template_dir = template_dir or run.paths.template_dir
    if template_dir:
        templates = load_templates(template_dir, run.preprocess, net.labels)
    else:
        templates = templates_from_glyphs(_glyph_set(run).glyphs, run.preprocess, net.labels)

    page = _load_page(page_image, run)
    results = segment_page(page, net, templates, run.static, run.dynamic)
    bands = [band.box for band in dissect_rows(page, run.static)]

    output_path = get_output_path(run.paths.output_dir)
    stem = f"{_stem(page_image)}-dynamic"
    char_dir = os.path.join(output_path, stem)
    os.makedirs(char_dir, exist_ok=True)

    records, boxes, shaded = [], [], []
    for index in sorted(results):
        result = results[index]
        for position, character in enumerate(result.characters):
            write_binary(os.path.join(char_dir, f"line{index:02d}-char{position:03d}.pbm"), crop(page, character.box))
        records.append(
            {
                "line": index,
                "band": bands[index].as_list(),
                "characters": [
                    {
                        "box": character.box.as_list(),
                        "label": character.label,
                        "confidence": round(character.confidence, 6),
                        "similarity": round(character.similarity.value, 1),
                    }
                    for character in result.characters
                ],
                "residue": list(result.residue) if result.residue else None,
                "skipped": [list(interval) for interval in result.skipped],
            }
        )
        boxes.extend(result.boxes)
        leftovers = list(result.skipped) + ([result.residue] if result.residue else [])
        shaded.extend(_band_box(bands[index], interval) for interval in leftovers)
        if result.residue:
            click.echo(f"Line {index}: columns {result.residue[0]}..{result.residue[1]} left unsegmented")

    _write_manifest(os.path.join(output_path, f"{stem}.jsonl"), records)
    overlay_path = os.path.join(output_path, f"{stem}-overlay.pgm")
    write_gray(overlay_path, render_overlay(page, boxes, shaded))
    click.echo(f"{len(results)} lines, {len(boxes)} characters; overlay written to {overlay_path}")


@cli.command("generate-corpus")
@_common_options
def generate_corpus_command(config_path, seed, out, jobs):
    """Render synthetic pages plus their ground truth."""
    run = _load(config_path, seed, out, jobs)
    glyphs = _glyph_set(run)
    pages, truth = generate(glyphs, run.corpus)

    output_path = get_output_path(run.paths.output_dir)
    for index, page in enumerate(pages):
        write_binary(os.path.join(output_path, f"page-{index:03d}.pbm"), page)
    _write_manifest(os.path.join(output_path, "truth.jsonl"), truth_records(truth))
    save_glyph_set(os.path.join(output_path, "glyphs"), glyphs)
    click.echo(f"{len(pages)} pages with {truth.glyph_count()} glyphs written to {output_path}")


@cli.command("evaluate")
@click.option("--assert-trends", is_flag=True, default=False, help="Exit with status 3 if the benchmark trends do not hold")
@_common_options
def evaluate_command(assert_trends, config_path, seed, out, jobs):
    """Run the static, training and static-vs-dynamic benchmarks and write the reports."""
    run = _load(config_path, seed, out, jobs)
    cfg = run.preprocess
    settings = run.evaluation
    glyphs = _glyph_set(run)
    output_path = get_output_path(run.paths.output_dir)

    click.echo("Evaluating static segmentation")
    pages, truth = generate(glyphs, run.corpus)
    static_score = evaluate_static(pages, truth, glyphs, run.static, cfg, settings.jobs)

    click.echo(f"Benchmarking {len(settings.methods)} training methods over {len(settings.seeds)} seeds")
    training = evaluate_training(
        glyphs,
        cfg,
        run.mlp.resolved_hidden_lens(cfg.vector_length),
        run.mlp.train_spec(),
        methods=settings.methods,
        epochs_grid=settings.epochs_grid,
        seeds=settings.seeds,
        augment=run.glyphs.augment,
        data_seed=run.corpus.seed,
        jobs=settings.jobs,
    )

    click.echo("Comparing static and dynamic segmentation on jittered pages")
    jittered = replace(run.corpus, seed=run.corpus.seed + 1, scale_jitter=settings.jittered_scale, inter_glyph_gap=settings.jittered_gap)
    jittered_pages, jittered_truth = generate(glyphs, jittered)
    model_file = run.paths.model_file
    if model_file and os.path.isfile(model_file):
        click.echo(f"Using the trained model in {model_file}")
        net = load_model(model_file)
        nets = {run.mlp.epochs: net}
        labels = net.labels
    else:
        data = training_set(glyphs, cfg, augment=run.glyphs.augment, seed=run.corpus.seed, holdout=False)
        nets, _ = train_checkpoints(run.mlp.mlp_config(cfg.vector_length, len(glyphs.labels)), data, run.mlp.train_spec(), settings.epochs_grid)
        labels = glyphs.labels
    templates = templates_from_glyphs(glyphs.glyphs, cfg, labels)
    dynamic = evaluate_dynamic(jittered_pages, jittered_truth, glyphs, nets, templates, run.static, run.dynamic, cfg, settings.jobs)

    for name, table in (
        (STATIC_REPORT, static_table(static_score)),
        (TRAINING_MSE_REPORT, training_mse_table(training)),
        (CLASSIFICATION_REPORT, classification_table(training)),
        (DYNAMIC_REPORT, dynamic_table(dynamic)),
    ):
        for path in write_report(output_path, name, table):
            click.echo(f"Report written to {path}")

    if assert_trends:
        violations = check_training_trends(training) + check_dynamic_trends(dynamic)
        if violations:
            error = TrendAssertionError(violations)
            report_failure(f"glyphseg evaluation broke {len(violations)} expected trend(s):\n" + "\n".join(violations))
            raise error
        click.echo("All benchmark trends hold")


if __name__ == "__main__":
    cli()
