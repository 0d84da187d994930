from .corpus import (AMBIGUITY_PARAMS, CORPUS_KINDS, DESK_PARAMS, CorpusConfig, CorpusError,
                     EvalScene, build_corpus, corpus_scene)
from .oracle import EmbeddingScorer, OracleScorer, oracle_embedder
from .suite import (THRESHOLDS, EvalError, EvalReport, EvalRow, EvalSetup, evaluate_scene,
                    evaluate_suite, furniture_sweep, grid_resolution_sweep, metric_ablation,
                    parse_method, vdr_sweep)
from .report import export_queries_csv, export_report, parse_report_csv, write_report
from .figures import (distance_field_svg, plot_distance_field, plot_error_cdf, plot_vdr_sweep,
                      svg_cell_colors)
