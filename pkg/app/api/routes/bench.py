import logging
from typing import Optional

import click

from app.api.dependencies import get_cli_config
from app.schemas.metrics import Relation
from app.services.artifact_service import ArtifactWriter
from app.services.bench_service import (
    CATEGORY_TABLE_PATH,
    generate_bench_prompts,
    load_category_table,
    prompts_to_jsonl,
)

logger = logging.getLogger(__name__)

router = click.Group(name="bench", help="Generate spatial-relation benchmark prompts.")

ALL_RELATIONS = ",".join(r.value for r in Relation)


@router.command("gen")
@click.option("--count", type=int, required=True, help="Basic prompts per relation.")
@click.option("--relations", default=ALL_RELATIONS, show_default=True, help="Comma-separated relations.")
@click.option("--multi", "multi_count", type=int, default=0, show_default=True,
              help="Multi-relation prompts built from pairs of basic prompts.")
@click.option("--table", "table_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Object category table (default: the shipped table).")
@click.option("--seed", type=int, default=None, help="Sampling seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
def gen(count: int, relations: str, multi_count: int, table_path: Optional[str], seed: Optional[int], out_dir: str):
    """Write bench.jsonl with one {prompt, specs, scene, kind} object per line."""
    config = get_cli_config(seed=seed)
    table = load_category_table(table_path)
    names = [r.strip() for r in relations.split(",") if r.strip()]
    prompts = generate_bench_prompts(table, names, count, config.seed, multi_count)

    writer = ArtifactWriter(out_dir, "bench gen", config.to_meta(), {
        "count": count,
        "relations": names,
        "multi": multi_count,
        "table_version": table.version,
    })
    writer.add_input(table_path or CATEGORY_TABLE_PATH)
    writer.write_text("bench.jsonl", prompts_to_jsonl(prompts))
    writer.finalize()
    click.echo(f"{len(prompts)} prompts")
