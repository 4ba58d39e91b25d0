"""cgforge: build and score compositional-generalization benchmarks for
context-dependent text-to-SQL dialogues.

The pipeline stages are importable as submodules:

    schema      database schema catalogs (Spider-style tables.json)
    sql_core    SQL parsing, canonical printing, template anonymization
    dataset_io  dialogue datasets and every artifact file format
    linker      schema linking and the context-dependence filter
    patterns    AST diffing and the modification-template library
    recombiner  template filling, recombination, lint rules
    drafter     draft utterance generation (rule-based or external)
    review      persistent double-review queue + HTTP service
    evaluator   exact-set-match scoring, splits, difficulty, error types
    cli         the `cgforge` command line entry point
"""

__version__ = "0.1.0"
